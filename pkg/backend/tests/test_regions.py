import numpy as np
import pytest

from app.config import Settings
from app.core.errors import ResourceLimitError, ValidationError
from app.core.regions import (Ball, Box, CellGrid, Complement, Difference, Ellipsoid, Intersection, Union,
                              region_from_dict, region_grid, split_cells)


def test_grid_counts():
    assert len(region_grid(Box([0.0, 0.0], [1.0, 1.0]), 0.5)) == 4
    assert len(region_grid(Ball([0.0, 0.0], 0.1), 1.0)) == 1


def test_safe_minus_target_grid_on_ex3(ex3):
    grid = region_grid(ex3.safe_minus_target, 0.05)
    assert len(grid) == 560
    assert np.all(grid.radii <= 0.025 + 1e-15)


def test_grid_covers_every_member():
    region = Union((Ellipsoid([0.0, 0.5], [10.0, 10.0]), Ball([-0.6, -0.5], 0.2)))
    grid = region_grid(region, 0.07)
    pts = region.sample(np.random.default_rng(5), 2_000)
    assert len(pts) == 2_000
    inside = np.all((pts[:, None, :] >= grid.lower[None] - 1e-12) & (pts[:, None, :] <= grid.upper[None] + 1e-12),
                    axis=-1).any(axis=1)
    assert inside.all()


def test_grid_cap_raises_resource_limit():
    with pytest.raises(ResourceLimitError) as err:
        region_grid(Box([0.0, 0.0], [1.0, 1.0]), 0.001, max_cells=1_000)
    assert err.value.requested == 1_000_000
    assert err.value.limit == 1_000


def test_nonpositive_resolution_rejected():
    with pytest.raises(ValueError):
        region_grid(Box([0.0], [1.0]), 0.0)


def test_empty_difference_gives_no_cells():
    box = Box([-1.0, -1.0], [1.0, 1.0])
    assert Difference(box, box).is_empty()
    assert len(region_grid(Difference(box, box), 0.1)) == 0


def test_snap_tolerance_comes_from_settings():
    # the removed box stops 1e-12 short of the cell boundary at 0.5
    region = Difference(Box([0.0], [1.0]), Box([0.0], [0.5 - 1e-12]))
    assert len(region_grid(region, 0.5)) == 1
    assert len(region_grid(region, 0.5, settings=Settings(snap_tolerance=0.0))) == 2
    assert len(region_grid(region, 0.5, tol=0.0)) == 2


def test_complement_is_taken_within_the_box():
    outside = Complement(Box([-1.0, -1.0], [1.0, 1.0]), Box([-0.5, -0.5], [0.5, 0.5]))
    np.testing.assert_array_equal(outside.contains(np.array([[0.9, 0.0], [0.0, 0.0], [1.5, 0.0]])),
                                  [True, False, False])
    with pytest.raises(ValidationError):
        Complement(Ball([0.0, 0.0], 1.0), Box([-0.5, -0.5], [0.5, 0.5]))


def test_cell_tests_on_ball_and_ellipsoid():
    ball = Ball([0.0, 0.0], 1.0)
    lo = np.array([[0.0, 0.0], [0.9, 0.9], [2.0, 2.0]])
    hi = lo + 0.1
    np.testing.assert_array_equal(ball.may_intersect(lo, hi), [True, False, False])
    np.testing.assert_array_equal(ball.within(lo, hi), [True, False, False])
    ell = Ellipsoid([0.0, 0.0], [4.0, 1.0])
    assert ell.contains(np.array([0.5, 0.0]))
    assert not ell.contains(np.array([0.6, 0.0]))
    np.testing.assert_allclose(ell.bounding_box().hi, [0.5, 1.0])


def test_intersection_membership_and_bounding_box():
    both = Intersection((Box([0.0, 0.0], [2.0, 2.0]), Ball([0.0, 0.0], 1.0)))
    np.testing.assert_array_equal(both.contains(np.array([[0.5, 0.5], [1.5, 0.1], [-0.5, 0.0]])),
                                  [True, False, False])
    np.testing.assert_allclose(both.bounding_box().lo, [0.0, 0.0])
    np.testing.assert_allclose(both.bounding_box().hi, [1.0, 1.0])
    assert Intersection((Box([0.0], [1.0]), Box([2.0], [3.0]))).is_empty()


def test_split_cells_halves_the_side():
    grid = region_grid(Box([0.0, 0.0], [1.0, 1.0]), 0.5)
    finer = split_cells(grid, 0.25)
    assert len(finer) == 16
    np.testing.assert_allclose(finer.half_widths, 0.125)
    assert sorted(map(tuple, finer.centers)) == sorted(map(tuple, region_grid(Box([0.0, 0.0], [1.0, 1.0]), 0.25).centers))


def test_cell_grid_concat_and_take():
    a = CellGrid(np.zeros((2, 2)), np.ones((2, 2)))
    b = CellGrid.empty(2)
    joined = CellGrid.concat([a, b, a], 2)
    assert len(joined) == 4
    assert len(joined.take(np.array([True, False, True, False]))) == 2
    assert len(CellGrid.concat([b], 2)) == 0


def test_region_documents_round_trip():
    doc = {'kind': 'difference',
           'base': {'kind': 'union', 'parts': [{'kind': 'box', 'lower': [0, 0], 'upper': [1, 1]},
                                               {'kind': 'ball', 'center': [2, 2], 'radius': 0.5}]},
           'removed': {'kind': 'ellipsoid', 'center': [0.5, 0.5], 'weights': [100, 100], 'level': 1.0}}
    region = region_from_dict(doc)
    assert region_from_dict(region.to_dict()) == region


@pytest.mark.parametrize('doc, field', [
    ({'kind': 'polygon'}, 'region.kind'),
    ({'kind': 'ball', 'center': [0, 0]}, 'region'),
    ({'kind': 'ball', 'center': [0, 0], 'radius': -1}, 'ball.radius'),
    ({'kind': 'box', 'lower': [0, 1], 'upper': [1, 0]}, 'box'),
])
def test_invalid_region_documents(doc, field):
    with pytest.raises(ValidationError) as err:
        region_from_dict(doc)
    assert err.value.field == field
