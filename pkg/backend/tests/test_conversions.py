import numpy as np
import pytest

from app.core.certificates import Affine, Network, Polynomial
from app.core.conditions import ConditionId, ConditionInstance, clauses
from app.core.conversions import (aras_to_bc4restricted, aras_to_mras, bc1_to_as, bc5_transform, mras_lambda_min,
                                  mras_to_aras, mras_to_bc4restricted)
from app.core.errors import ParameterDomainError
from app.utils.data_loader import data_loader


def test_aras_to_mras():
    assert aras_to_mras(0.1, 2.0) == pytest.approx((0.95, 0.1, 2.0))
    assert aras_to_mras(1.0, 2.0) == pytest.approx((0.5, 1.0, 2.0))


def test_mras_to_aras():
    assert mras_to_aras(0.5, 0.1, 2.0) == pytest.approx((0.05, 2.0))
    assert mras_to_aras(0.9, 1.0, 3.0) == pytest.approx((0.1, 3.0))


def test_aras_to_bc4restricted():
    V = Polynomial.constant(2, 1.0)
    h, lam = aras_to_bc4restricted(V, eps=0.1, p=0.5)
    assert lam == pytest.approx(1.0 / 1.05)
    assert float(h.evaluate(np.zeros(2))) == pytest.approx(0.5)


def test_mras_to_bc4restricted():
    V = Polynomial.constant(2, 1.0)
    _, lam, p = mras_to_bc4restricted(V, 0.5, 0.1, 2.0)
    assert p == pytest.approx(0.5)
    assert lam == pytest.approx(0.9743589743589743, abs=1e-12)
    _, lam, _ = mras_to_bc4restricted(V, 0.9, 0.5, 2.0)
    assert lam == pytest.approx(0.967741935483871, abs=1e-12)


def test_mras_lambda_min_is_the_ratio_at_delta():
    # the ratio decreases on [delta, lambda'], so the maximum sits at delta
    assert mras_lambda_min(0.5, 0.1, 2.0) == pytest.approx((1 - 0.05) / (1 - 0.025), abs=1e-12)


def test_bc5_transform_is_an_involution():
    h1, h2 = Polynomial.constant(2, 0.0), Polynomial([[1, 0]], [2.0])
    t1, t2 = bc5_transform(h1, h2)
    assert float(t1.evaluate(np.array([0.3, 0.4]))) == pytest.approx(1.0)
    assert float(t2.evaluate(np.array([0.3, 0.4]))) == pytest.approx(0.4)
    back1, back2 = bc5_transform(t1, t2)
    assert back1 is h1 and back2 is h2


def test_bc1_to_as():
    v = bc1_to_as(Polynomial.constant(2, 0.25))
    assert isinstance(v, Affine)
    assert float(v.evaluate(np.zeros(2))) == pytest.approx(0.75)


@pytest.mark.parametrize('call', [
    lambda: aras_to_mras(0.0, 2.0),
    lambda: aras_to_mras(0.1, 1.0),
    lambda: aras_to_mras(3.0, 2.0),
    lambda: mras_to_aras(1.0, 0.1, 2.0),
    lambda: mras_to_aras(0.5, 0.0, 2.0),
    lambda: aras_to_bc4restricted(Polynomial.constant(1, 0.0), 0.1, 1.0),
    lambda: mras_to_bc4restricted(Polynomial.constant(1, 0.0), 0.5, 3.0, 2.0),
])
def test_parameters_outside_their_domain(call):
    with pytest.raises(ParameterDomainError) as err:
        call()
    assert err.value.bound


def quadratic(c, a1, a2):
    return Polynomial([[0, 0], [2, 0], [0, 2]], [c, a1, a2])


def suite_points(problem, rng, n=500):
    return np.concatenate([problem.working_box.sample(rng, n - n // 5), problem.init.sample(rng, n // 5)])


def locally_satisfied(clause_list, x):
    """Points where every clause that applies has a non-positive residual"""
    ok = np.ones(len(x), dtype=bool)
    for clause in clause_list:
        ok &= ~clause.applies(x) | (clause.residual(x) <= 0.0)
    return ok


def check_implication(source, target, x, checked):
    mask = locally_satisfied(clauses(source), x)
    for i, clause in enumerate(clauses(target)):
        sel = mask & clause.applies(x)
        if not sel.any():
            continue
        residuals = clause.residual(x[sel])
        assert residuals.max() <= 1e-9, clause.label
        checked[i] += int(sel.sum())


def test_aras_certificates_convert_pointwise(ex3):
    rng = np.random.default_rng(11)
    checked = [0] * 4
    for _ in range(20):
        p, eps = rng.uniform(0.0, 0.9), rng.uniform(1e-3, 0.05)
        V = quadratic(rng.uniform(0.0, 0.5), *rng.uniform(0.5, 5.0, 2))
        h, lam = aras_to_bc4restricted(V, eps, p)
        source = ConditionInstance(ConditionId.BC2, ex3, {'V': V}, {'eps': eps, 'p': p})
        target = ConditionInstance(ConditionId.BC4_RESTRICTED, ex3, {'h': h}, {'lambda': lam, 'p': p})
        check_implication(source, target, suite_points(ex3, rng), checked)
    assert all(count > 0 for count in checked)


def test_mras_certificates_convert_pointwise(ex3):
    rng = np.random.default_rng(12)
    checked = [0] * 4
    for _ in range(20):
        gamma, delta, lam_prime = rng.uniform(0.6, 0.95), rng.uniform(0.01, 0.1), rng.uniform(1.2, 4.0)
        V = quadratic(delta + rng.uniform(0.0, 0.3), *rng.uniform(0.5, 5.0, 2))
        h, lam, p = mras_to_bc4restricted(V, gamma, delta, lam_prime)
        source = ConditionInstance(ConditionId.BC3, ex3, {'V': V},
                                   {'gamma': gamma, 'delta': delta, 'lambda_prime': lam_prime})
        target = ConditionInstance(ConditionId.BC4_RESTRICTED, ex3, {'h': h}, {'lambda': lam, 'p': p})
        check_implication(source, target, suite_points(ex3, rng), checked)
    assert all(count > 0 for count in checked)


def test_mras_lambda_min_matches_a_fine_grid():
    rng = np.random.default_rng(13)
    for _ in range(20):
        gamma, lam = rng.uniform(0.01, 0.99), rng.uniform(1.01, 10.0)
        delta = rng.uniform(1e-3, lam)
        v = np.linspace(delta, lam, 10 ** 6)
        oracle = float(np.max((1.0 - v / lam) / (1.0 - gamma * v / lam)))
        value = mras_lambda_min(gamma, delta, lam)
        assert oracle - 1e-12 <= value <= oracle + 1e-9


@pytest.mark.parametrize('name', ['ex3', 'ex4'])
def test_bc5_and_its_dual_have_equal_residuals(name):
    problem = data_loader.load_problem(name)
    rng = np.random.default_rng(14)
    for _ in range(5):
        pairs = [(Network.random([2, 4, 4, 1], rng), Network.random([2, 8, 8, 1], rng)),
                 (Polynomial.full(2, 3, rng.uniform(-1.0, 1.0, 10)), Network.random([2, 4, 1], rng))]
        for h1, h2 in pairs:
            p = rng.uniform(0.0, 1.0)
            x = problem.working_box.sample(rng, 1_000)
            primal = clauses(ConditionInstance(ConditionId.BC5, problem, {'h1': h1, 'h2': h2}, {'p': p}))
            t1, t2 = bc5_transform(h1, h2)
            dual = clauses(ConditionInstance(ConditionId.BC5_DUAL, problem, {'h1': t1, 'h2': t2}, {'p': p}))
            for a, b in zip(primal, dual):
                np.testing.assert_array_equal(a.applies(x), b.applies(x))
                np.testing.assert_allclose(a.residual(x), b.residual(x), rtol=0.0, atol=1e-12)
