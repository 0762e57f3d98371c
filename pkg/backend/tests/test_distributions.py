import numpy as np
import pytest

from app.core.distributions import DisturbanceDistribution, triangular_product, uniform_box
from app.core.errors import ValidationError
from app.core.parser import expression_parser
from app.core.system import SystemModel, expectation


def _walk(dist):
    return SystemModel(1, 1, (expression_parser.parse('x1 + θ1', 1, 1),), dist)


@pytest.mark.parametrize('dist', [uniform_box([-1.0, 0.0], [1.0, 2.0]), triangular_product([-1.0, 0.0], [1.0, 2.0])])
def test_quadrature_weights_sum_to_one_and_nodes_stay_inside(dist):
    nodes, weights = dist.quadrature(6)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(weights > 0)
    assert np.all(nodes >= dist.lower) and np.all(nodes <= dist.upper)


def test_triangular_rule_has_two_nodes_per_order_and_axis():
    nodes, _ = triangular_product([-1.0], [1.0]).quadrature(4)
    assert nodes.shape == (8, 1)
    nodes, _ = uniform_box([-1.0, -1.0], [1.0, 1.0]).quadrature(4)
    assert nodes.shape == (16, 2)


def test_second_moments():
    square = lambda y: y[..., 0] ** 2
    assert expectation(_walk(uniform_box([-1.0], [1.0])), square, [0.0]) == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert expectation(_walk(triangular_product([-1.0], [1.0])), square, [0.0]) == pytest.approx(1.0 / 6.0, abs=1e-14)


def test_axis_masses_are_one():
    for dist in (uniform_box([-10.0], [10.0]), triangular_product([-1.0, -0.5], [1.0, 0.5])):
        np.testing.assert_allclose(dist.axis_masses(), 1.0, atol=1e-12)


def test_density_values():
    tri = triangular_product([-1.0, -1.0], [1.0, 1.0])
    assert tri.density(np.array([0.0, 0.0])) == pytest.approx(1.0)
    assert tri.density(np.array([0.5, 0.0])) == pytest.approx(0.5)
    assert tri.density(np.array([1.5, 0.0])) == 0.0
    uni = uniform_box([-1.0], [1.0])
    assert uni.density(np.array([0.3])) == pytest.approx(0.5)


def test_inverse_cdf_sampling_moments():
    tri = triangular_product([-1.0], [1.0])
    assert tri.from_uniform(np.array([0.5]))[0] == pytest.approx(0.0)
    samples = tri.sample(np.random.default_rng(11), 200_000)
    assert samples.mean() == pytest.approx(0.0, abs=0.01)
    assert samples.var() == pytest.approx(1.0 / 6.0, abs=0.01)
    assert samples.min() >= -1.0 and samples.max() <= 1.0


def test_from_dict_accepts_pairs_and_aliases():
    dist = DisturbanceDistribution.from_dict({'kind': 'Triangular', 'support': [[-1, 1], [-2, 2]]})
    assert dist.kind == 'triangular_product'
    np.testing.assert_array_equal(dist.upper, [1.0, 2.0])
    assert DisturbanceDistribution.from_dict(dist.to_dict()) == dist


@pytest.mark.parametrize('doc', [
    {'kind': 'gaussian', 'support': [[-1, 1]]},
    {'kind': 'uniform_box', 'support': [[1, -1]]},
    {'kind': 'uniform_box', 'support': 'wide'},
])
def test_invalid_distributions(doc):
    with pytest.raises(ValidationError):
        DisturbanceDistribution.from_dict(doc)


def test_quadrature_order_below_two_rejected():
    with pytest.raises(ValueError):
        uniform_box([-1.0], [1.0]).quadrature(1)
