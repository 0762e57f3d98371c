import numpy as np
import pytest

from app.core.certificates import Polynomial
from app.core.conditions import (SKIPPED, ConditionId, ConditionInstance, certified_bound, clauses, pointwise_bound,
                                 required_roles, residual_at)
from app.core.errors import MissingInvariantError, ValidationError
from conftest import box, make_problem

SCALARS = {
    ConditionId.BC1: {'eps': 1e-6, 'p': 0.5},
    ConditionId.AS: {'p': 0.5},
    ConditionId.BC2: {'eps': 0.1, 'p': 0.5},
    ConditionId.BC3: {'gamma': 0.5, 'delta': 0.1, 'lambda_prime': 2.0},
    ConditionId.BC4: {'lambda': 0.99, 'p': 0.5},
    ConditionId.BC4_SINGLETON: {'lambda': 0.99, 'p': 0.5},
    ConditionId.BC4_RESTRICTED: {'lambda': 0.99, 'p': 0.5},
    ConditionId.BC5: {'p': 0.5},
    ConditionId.BC5_UPPER: {'p': 0.3},
    ConditionId.BC5_DUAL: {'p': 0.5},
}

CLAUSE_COUNTS = {
    ConditionId.BC1: 6, ConditionId.AS: 4, ConditionId.BC2: 4, ConditionId.BC3: 5, ConditionId.BC4: 4,
    ConditionId.BC4_SINGLETON: 4, ConditionId.BC4_RESTRICTED: 4, ConditionId.BC5: 5, ConditionId.BC5_UPPER: 5,
    ConditionId.BC5_DUAL: 5,
}


def constant_instance(problem, cid, value=0.0, **scalars):
    certs = {role: Polynomial.constant(problem.dim, value) for role in required_roles(cid)}
    x0 = (0.125, 0.0) if cid == ConditionId.BC4_SINGLETON else None
    return ConditionInstance(cid, problem, certs, {**SCALARS[cid], **scalars}, x0)


@pytest.mark.parametrize('cid', list(ConditionId))
def test_clause_counts(ex3, cid):
    assert len(clauses(constant_instance(ex3, cid))) == CLAUSE_COUNTS[cid]


def test_drift_clause_is_vacuous_when_target_equals_safe():
    square = box([-1.0, -1.0], [1.0, 1.0])
    problem = make_problem(['0.5*x1 + 0.01*θ1', '0.5*x2'], box([0.1, 0.1], [0.2, 0.2]), square, square,
                           box([-2.0, -2.0], [2.0, 2.0]))
    drift = clauses(constant_instance(problem, ConditionId.BC1))[5]
    assert drift.is_vacuous()


def test_bc3_drift_residual(ex3):
    instance = constant_instance(ex3, ConditionId.BC3, value=1.0, gamma=0.5)
    drift = clauses(instance)[4]
    assert residual_at(drift, [0.3, 0.3]) == pytest.approx(0.5)


def test_bc4_init_residual_and_skipped_points(ex3):
    init = clauses(constant_instance(ex3, ConditionId.BC4, p=0.5))[0]
    assert residual_at(init, [0.125, 0.0]) == pytest.approx(0.5)
    assert residual_at(init, [0.5, 0.5]) is SKIPPED


def test_guard_excludes_points(ex3):
    # h = -1 fails the guard h >= 0 of the restricted decrease clause everywhere
    instance = constant_instance(ex3, ConditionId.BC4_RESTRICTED, value=-1.0)
    decrease = clauses(instance)[3]
    assert residual_at(decrease, [0.3, 0.3]) is SKIPPED
    assert decrease.guard_slack(np.array([0.3, 0.3])) == pytest.approx(1.0)


def test_residual_batch_matches_pointwise(ex3):
    h = Polynomial([[1, 0], [0, 2]], [0.4, -1.5])
    instance = ConditionInstance(ConditionId.BC4, ex3, {'h': h}, SCALARS[ConditionId.BC4])
    decrease = clauses(instance)[3]
    pts = np.array([[0.3, 0.2], [-0.4, 0.5], [0.55, -0.25]])
    batch = decrease.residual(pts)
    for p, value in zip(pts, batch):
        assert residual_at(decrease, p) == pytest.approx(value)


def test_certified_bounds(ex3):
    assert str(certified_bound(constant_instance(ex3, ConditionId.BC3, lambda_prime=2.0))) == 'Lower(0.5)'
    assert str(certified_bound(constant_instance(ex3, ConditionId.BC5_UPPER, p=0.3))) == 'Upper(0.3)'
    assert str(certified_bound(constant_instance(ex3, ConditionId.BC1, p=0.0))) == 'Lower(0)'


def test_pointwise_bound_uses_h1_at_x0(ex3):
    instance = constant_instance(ex3, ConditionId.BC1, value=0.2, p=0.5)
    bound = pointwise_bound(instance, [0.125, 0.0])
    assert (bound.kind, bound.value) == ('lower', pytest.approx(0.8))


def test_conditions_over_invariant_need_one(walk1d):
    for cid in (ConditionId.BC2, ConditionId.BC3, ConditionId.BC4_RESTRICTED):
        with pytest.raises(MissingInvariantError):
            clauses(constant_instance(walk1d, cid))


@pytest.mark.parametrize('certs, scalars, field', [
    ({'g': 0.0}, {'lambda': 0.9, 'p': 0.5}, 'certificates'),
    ({'h': 0.0}, {'p': 0.5}, 'scalars'),
    ({'h': 0.0}, {'lambda': 1.5, 'p': 0.5}, 'scalars.lambda'),
    ({'h': 0.0}, {'lambda': 0.9, 'p': -0.1}, 'scalars.p'),
])
def test_instance_validation(ex3, certs, scalars, field):
    polys = {role: Polynomial.constant(2, v) for role, v in certs.items()}
    with pytest.raises(ValidationError) as err:
        ConditionInstance(ConditionId.BC4, ex3, polys, scalars)
    assert err.value.field == field


def test_singleton_needs_x0_and_others_refuse_it(ex3):
    h = {'h': Polynomial.constant(2, 0.0)}
    with pytest.raises(ValidationError):
        ConditionInstance(ConditionId.BC4_SINGLETON, ex3, h, SCALARS[ConditionId.BC4])
    with pytest.raises(ValidationError):
        ConditionInstance(ConditionId.BC4, ex3, h, SCALARS[ConditionId.BC4], x0=(0.1, 0.0))
    singleton = ConditionInstance(ConditionId.BC4_SINGLETON, ex3, h, SCALARS[ConditionId.BC4], x0=[0.125, 0.0])
    assert clauses(singleton)[0].domain.contains(np.array([0.125, 0.0]))


def test_scalar_and_role_aliases(ex3):
    certs = {'h₁': Polynomial.constant(2, 0.0), 'h2': Polynomial.constant(2, 0.0)}
    instance = ConditionInstance(ConditionId.parse('bc5'), ex3, certs, {'p': 0.5})
    assert instance.condition_id == ConditionId.BC5
    assert set(instance.certificates) == {'h1', 'h2'}
    bc3 = ConditionInstance(ConditionId.BC3, ex3, {'V': Polynomial.constant(2, 0.0)},
                            {'γ': 0.5, 'δ': 0.1, "λ'": 2.0})
    assert bc3.scalars == {'gamma': 0.5, 'delta': 0.1, 'lambda_prime': 2.0}


def test_unknown_condition_id():
    with pytest.raises(ValidationError):
        ConditionId.parse('BC9')
    assert ConditionId.parse('bc4-restricted') == ConditionId.BC4_RESTRICTED


def test_parse_accepts_condition_ids():
    for cid in ConditionId:
        assert ConditionId.parse(cid) is cid
    assert ConditionId.parse(str(ConditionId.BC4.value)) is ConditionId.BC4
