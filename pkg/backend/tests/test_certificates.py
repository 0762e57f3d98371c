import numpy as np
import pytest

from app.core.certificates import (Affine, Network, Polynomial, build_template, certificate_from_dict, evaluate,
                                   lipschitz_bound, monomial_exponents, parameter_gradient)
from app.core.errors import NoTrainableParametersError, ValidationError
from app.core.regions import Box


def test_polynomial_evaluation():
    c = Polynomial([[2, 0], [0, 2]], [1.0, 1.0])
    assert evaluate(c, [0.3, 0.4]) == pytest.approx(0.25)


def test_affine_image():
    h = Affine(-(1 - 0.5), 1.0, Polynomial.constant(2, 1.0))
    assert evaluate(h, [0.1, 0.2]) == pytest.approx(0.5)
    assert not h.trainable
    with pytest.raises(NoTrainableParametersError):
        h.parameter_gradient(np.zeros(2))


def test_polynomial_gradient_is_the_monomials():
    c = Polynomial([[0, 0], [1, 0]], [0.3, -0.7])
    np.testing.assert_allclose(parameter_gradient(c, [2.0, 5.0]), [1.0, 2.0])


def test_network_gradient_of_final_bias_is_one():
    net = Network.random([2, 4, 3, 1], np.random.default_rng(0))
    params = net.parameters.copy()
    params[-4:-1] = 0.0
    net = net.with_parameters(params)
    grad = parameter_gradient(net, [0.4, -0.2])
    assert grad[-1] == pytest.approx(1.0)
    np.testing.assert_array_equal(grad[-4:-1] == 0.0, [False, False, False])


def test_network_gradient_matches_finite_differences():
    net = Network.random([2, 5, 4, 1], np.random.default_rng(1))
    x = np.array([[0.3, -0.8], [1.2, 0.5]])
    analytic = net.parameter_gradient(x)
    params = net.parameters
    step = 1e-6
    for k in range(0, len(params), 3):
        bumped = params.copy()
        bumped[k] += step
        up = net.with_parameters(bumped).evaluate(x)
        bumped[k] -= 2 * step
        down = net.with_parameters(bumped).evaluate(x)
        np.testing.assert_allclose(analytic[:, k], (up - down) / (2 * step), atol=1e-6)


def test_lipschitz_bounds_of_simple_polynomials():
    square = Box([-1.0, -1.0], [1.0, 1.0])
    assert lipschitz_bound(Polynomial.constant(2, 3.0), square) == 0.0
    assert lipschitz_bound(Polynomial([[1, 0]], [3.0]), square) == pytest.approx(3.0)
    assert lipschitz_bound(Polynomial([[2]], [1.0]), Box([-1.0], [1.0])) == pytest.approx(2.0)


@pytest.mark.parametrize('cert', [
    Polynomial.full(2, 3, np.random.default_rng(2).normal(size=10)),
    Network.random([2, 8, 8, 1], np.random.default_rng(3)),
])
def test_lipschitz_bound_dominates_sampled_slopes(cert):
    lo, hi = np.array([-0.3, 0.1]), np.array([0.2, 0.4])
    bound = float(cert.lipschitz_bound(lo, hi))
    rng = np.random.default_rng(4)
    x = lo + rng.random((2_000, 2)) * (hi - lo)
    y = lo + rng.random((2_000, 2)) * (hi - lo)
    slopes = np.abs(cert.evaluate(x) - cert.evaluate(y)) / np.max(np.abs(x - y), axis=-1)
    assert slopes.max() <= bound + 1e-9


def test_network_local_bound_never_exceeds_global():
    net = Network.random([2, 8, 8, 1], np.random.default_rng(6))
    local = net.lipschitz_bound(np.array([[-5.0, -5.0]]), np.array([[5.0, 5.0]]))
    assert local[0] <= net.global_lipschitz() + 1e-12


def test_monomial_basis_order():
    np.testing.assert_array_equal(monomial_exponents(2, 1), [[0, 0], [1, 0], [0, 1]])
    assert len(monomial_exponents(2, 4)) == 15


def test_coefficients_are_clipped_to_the_box():
    c = Polynomial.full(1, 2)
    assert np.all(c.with_parameters(np.array([500.0, -500.0, 3.0])).parameters == [100.0, -100.0, 3.0])
    with pytest.raises(ValidationError):
        Polynomial([[1]], [250.0])


def test_documents_round_trip():
    net = Network.random([2, 4, 1], np.random.default_rng(7))
    wrapped = Affine(-1.0, 1.0, net)
    again = certificate_from_dict(wrapped.to_dict())
    x = np.random.default_rng(8).normal(size=(10, 2))
    np.testing.assert_allclose(again.evaluate(x), wrapped.evaluate(x), atol=1e-14)
    poly = Polynomial.full(2, 2, np.arange(6, dtype=float))
    np.testing.assert_allclose(certificate_from_dict(poly.to_dict()).evaluate(x), poly.evaluate(x))


@pytest.mark.parametrize('spec, kind, count', [
    ('net:8x8', 'network', 2 * 8 + 8 + 8 * 8 + 8 + 8 + 1),
    ('4x4', 'network', 2 * 4 + 4 + 4 * 4 + 4 + 4 + 1),
    ('poly:2', 'polynomial', 6),
    ('const:0.5', 'polynomial', 1),
])
def test_build_template(spec, kind, count):
    cert = build_template(spec, 2, np.random.default_rng(0))
    assert cert.kind == kind
    assert cert.parameter_count == count


@pytest.mark.parametrize('spec', ['net:', 'poly:x', 'spline:3'])
def test_unknown_templates_rejected(spec):
    with pytest.raises(ValidationError):
        build_template(spec, 2)


def test_malformed_certificate_document():
    with pytest.raises(ValidationError) as err:
        certificate_from_dict({'kind': 'network', 'layers': [2, 3, 1], 'parameters': [0.0]}, 'certificates.h')
    assert err.value.field == 'certificate.parameters'
    with pytest.raises(ValidationError) as err:
        certificate_from_dict({'kind': 'polynomial', 'dim': 2}, 'certificates.h')
    assert err.value.field == 'certificates.h'
