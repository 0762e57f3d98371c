"""
Barrier-like conditions as residual clauses.

A clause reads "residual(x) <= 0 for every x in domain that passes the guard",
where residual(x) = constant + sum_k weight_k * term_k(x) and each term is a
certificate value c(x) or its one-step expectation E_θ[c(f(x, θ))]. A positive
residual is a violation. Wherever a condition quantifies over the complement
of the safe set, the complement is taken within the working box.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from app.core.certificates import Certificate
from app.core.errors import ContractViolation, MissingInvariantError, ValidationError
from app.core.regions import Box, Region
from app.core.system import ReachAvoidProblem

logger = logging.getLogger(__name__)


class ConditionId(str, enum.Enum):
    BC1 = 'BC1'
    AS = 'AS'
    BC2 = 'BC2'
    BC3 = 'BC3'
    BC4 = 'BC4'
    BC4_SINGLETON = 'BC4_SINGLETON'
    BC4_RESTRICTED = 'BC4_RESTRICTED'
    BC5 = 'BC5'
    BC5_UPPER = 'BC5_UPPER'
    BC5_DUAL = 'BC5_DUAL'

    @classmethod
    def parse(cls, value) -> 'ConditionId':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper().replace('-', '_'))
        except ValueError:
            raise ValidationError(f"unknown condition {value!r}", field='condition_id')


# roles and scalars each condition binds
REQUIREMENTS: Dict[ConditionId, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    ConditionId.BC1: (('h1', 'h2'), ('eps', 'p')),
    ConditionId.AS: (('v',), ('p',)),
    ConditionId.BC2: (('V',), ('eps', 'p')),
    ConditionId.BC3: (('V',), ('gamma', 'delta', 'lambda_prime')),
    ConditionId.BC4: (('h',), ('lambda', 'p')),
    ConditionId.BC4_SINGLETON: (('h',), ('lambda', 'p')),
    ConditionId.BC4_RESTRICTED: (('h',), ('lambda', 'p')),
    ConditionId.BC5: (('h1', 'h2'), ('p',)),
    ConditionId.BC5_UPPER: (('h1', 'h2'), ('p',)),
    ConditionId.BC5_DUAL: (('h1', 'h2'), ('p',)),
}

NEEDS_INVARIANT = frozenset({ConditionId.BC2, ConditionId.BC3, ConditionId.BC4_RESTRICTED})

SCALAR_ALIASES = {
    'ε': 'eps', 'epsilon': 'eps', 'λ': 'lambda', 'lam': 'lambda', 'γ': 'gamma', 'δ': 'delta',
    "λ'": 'lambda_prime', 'λ′': 'lambda_prime', 'lambda\'': 'lambda_prime', 'lambdaprime': 'lambda_prime',
}

ROLE_ALIASES = {'h₁': 'h1', 'h₂': 'h2'}

# (description, predicate) per scalar
SCALAR_RANGES = {
    'eps': ('> 0', lambda v: v > 0),
    'lambda': ('in (0, 1)', lambda v: 0 < v < 1),
    'gamma': ('in (0, 1)', lambda v: 0 < v < 1),
    'delta': ('> 0', lambda v: v > 0),
    'lambda_prime': ('> 1', lambda v: v > 1),
    'p': ('in [0, 1]', lambda v: 0 <= v <= 1),
}


def required_roles(condition_id: ConditionId) -> Tuple[str, ...]:
    return REQUIREMENTS[ConditionId(condition_id)][0]


def required_scalars(condition_id: ConditionId) -> Tuple[str, ...]:
    return REQUIREMENTS[ConditionId(condition_id)][1]


@dataclass(frozen=True, eq=False)
class ConditionInstance:
    condition_id: ConditionId
    problem: ReachAvoidProblem
    certificates: Mapping[str, Certificate]
    scalars: Mapping[str, float]
    x0: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        cid = ConditionId(self.condition_id)
        object.__setattr__(self, 'condition_id', cid)
        certs = {ROLE_ALIASES.get(k, k): v for k, v in self.certificates.items()}
        scalars = {SCALAR_ALIASES.get(k, k): float(v) for k, v in self.scalars.items()}
        roles, names = REQUIREMENTS[cid]
        if set(certs) != set(roles):
            raise ValidationError(f"{cid.value} binds roles {list(roles)}, got {sorted(certs)}", field='certificates')
        if set(scalars) != set(names):
            raise ValidationError(f"{cid.value} takes scalars {list(names)}, got {sorted(scalars)}", field='scalars')
        for name, value in scalars.items():
            text, ok = SCALAR_RANGES[name]
            if not ok(value):
                raise ValidationError(f"{name} = {value} must be {text}", field=f"scalars.{name}")
        if cid == ConditionId.BC2 and scalars['p'] >= 1:
            raise ValidationError("BC2 needs p < 1 so that 1/(1-p) is finite", field='scalars.p')
        for role, cert in certs.items():
            if cert.dim != self.problem.dim:
                raise ValidationError(f"certificate has dimension {cert.dim}, problem has {self.problem.dim}",
                                      field=f"certificates.{role}")
        if cid == ConditionId.BC4_SINGLETON:
            if self.x0 is None:
                raise ValidationError("BC4_SINGLETON needs an initial state x0", field='x0')
            x0 = tuple(float(v) for v in np.asarray(self.x0, dtype=float).ravel())
            if len(x0) != self.problem.dim:
                raise ValidationError(f"x0 has dimension {len(x0)}", field='x0')
            object.__setattr__(self, 'x0', x0)
        elif self.x0 is not None:
            raise ValidationError(f"{cid.value} takes no x0", field='x0')
        object.__setattr__(self, 'certificates', certs)
        object.__setattr__(self, 'scalars', scalars)

    def with_certificates(self, certificates: Mapping[str, Certificate]) -> 'ConditionInstance':
        return ConditionInstance(self.condition_id, self.problem, dict(certificates), self.scalars, self.x0)

    def with_scalars(self, **changes) -> 'ConditionInstance':
        return ConditionInstance(self.condition_id, self.problem, self.certificates, {**self.scalars, **changes}, self.x0)

    def describe(self) -> str:
        scalars = ', '.join(f"{k}={v:g}" for k, v in sorted(self.scalars.items()))
        return f"{self.condition_id.value}({self.problem.name}; {scalars})"

    def to_dict(self, certificate_refs: Mapping[str, Any] = None) -> Dict[str, Any]:
        refs = certificate_refs or {role: cert.to_dict() for role, cert in self.certificates.items()}
        doc = {'condition_id': self.condition_id.value, 'scalars': dict(self.scalars), 'certificates': dict(refs)}
        if self.x0 is not None:
            doc['x0'] = list(self.x0)
        return doc


@dataclass(frozen=True)
class Term:
    role: str
    weight: float = 1.0
    expected: bool = False

    def describe(self) -> str:
        core = f"E[{self.role}∘f]" if self.expected else self.role
        if self.weight == 1.0:
            return f"+ {core}"
        if self.weight == -1.0:
            return f"- {core}"
        return f"{'+' if self.weight > 0 else '-'} {abs(self.weight):g}·{core}"


@dataclass(frozen=True)
class Guard:
    """Restricts a clause to points where role(x) <= threshold (upper) or role(x) >= threshold"""
    role: str
    threshold: float
    upper: bool = True

    def slack(self, value: np.ndarray) -> np.ndarray:
        """<= 0 exactly when the guard passes"""
        return (value - self.threshold) if self.upper else (self.threshold - value)

    def describe(self) -> str:
        return f"{self.role} {'<=' if self.upper else '>='} {self.threshold:g}"


class Skipped:
    """Marker for a point outside a clause's domain or guard"""

    def __repr__(self):
        return 'Skipped'


SKIPPED = Skipped()


@dataclass(frozen=True, eq=False)
class ResidualClause:
    label: str
    domain: Region
    constant: float
    terms: Tuple[Term, ...]
    certificates: Mapping[str, Certificate] = field(repr=False)
    problem: ReachAvoidProblem = field(repr=False)
    guard: Optional[Guard] = None

    @property
    def roles(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(t.role for t in self.terms))

    @property
    def uses_expectation(self) -> bool:
        return any(t.expected for t in self.terms)

    def is_vacuous(self) -> bool:
        return self.domain.is_empty()

    def residual(self, x: np.ndarray, quad_order: int = 8) -> np.ndarray:
        """Residual values at states shaped (..., n), ignoring domain and guard"""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.problem.dim:
            raise ContractViolation(f"state has dimension {x.shape[-1]}, expected {self.problem.dim}")
        total = np.full(x.shape[:-1], self.constant, dtype=float)
        successors = weights = None
        for term in self.terms:
            cert = self.certificates[term.role]
            if term.expected:
                if successors is None:
                    successors, weights = self.problem.system.successors(x, quad_order)
                total = total + term.weight * (cert.evaluate(successors) @ weights)
            else:
                total = total + term.weight * cert.evaluate(x)
        return total

    def guard_slack(self, x: np.ndarray) -> Optional[np.ndarray]:
        if self.guard is None:
            return None
        return self.guard.slack(self.certificates[self.guard.role].evaluate(np.asarray(x, dtype=float)))

    def applies(self, x: np.ndarray) -> np.ndarray:
        """Domain membership and guard, exactly"""
        x = np.asarray(x, dtype=float)
        mask = self.domain.contains(x)
        if self.guard is not None:
            mask = mask & (self.guard_slack(x) <= 0.0)
        return mask

    def lipschitz_bound(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Infinity-norm Lipschitz bound of the residual on each cell"""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        total = np.zeros(lo.shape[:-1])
        image = lf = None
        for term in self.terms:
            cert = self.certificates[term.role]
            if term.expected:
                if image is None:
                    image = self.problem.system.image_box(lo, hi)
                    lf = self.problem.system.lipschitz_bound(lo, hi)
                total = total + abs(term.weight) * cert.lipschitz_bound(*image) * lf
            else:
                total = total + abs(term.weight) * cert.lipschitz_bound(lo, hi)
        return total

    def guard_lipschitz(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        return self.certificates[self.guard.role].lipschitz_bound(lo, hi)

    def parameter_gradients(self, x: np.ndarray, quad_order: int = 8) -> Dict[str, np.ndarray]:
        """d residual / d params per trainable role, each shaped (..., P_role)"""
        x = np.asarray(x, dtype=float)
        grads: Dict[str, np.ndarray] = {}
        successors = weights = None
        for term in self.terms:
            cert = self.certificates[term.role]
            if not cert.trainable:
                continue
            if term.expected:
                if successors is None:
                    successors, weights = self.problem.system.successors(x, quad_order)
                g = np.einsum('...qp,q->...p', cert.parameter_gradient(successors), weights)
            else:
                g = cert.parameter_gradient(x)
            grads[term.role] = grads.get(term.role, 0.0) + term.weight * g
        return grads

    def describe(self) -> str:
        parts = ' '.join(t.describe() for t in self.terms)
        text = f"{self.constant:g} {parts} <= 0" if self.constant else f"{parts.lstrip('+ ')} <= 0"
        return text + (f" where {self.guard.describe()}" if self.guard else '')


def _region_or_missing(region: Optional[Region], cid: ConditionId) -> Region:
    if region is None:
        raise MissingInvariantError(f"{cid.value} is stated over an invariant set, but the problem defines none")
    return region


def clauses(instance: ConditionInstance) -> List[ResidualClause]:
    cid = instance.condition_id
    pr = instance.problem
    s = instance.scalars
    certs = instance.certificates

    def clause(label, domain, constant, *terms, guard=None):
        return ResidualClause(label, domain, float(constant), tuple(terms), certs, pr, guard)

    def val(role, w=1.0):
        return Term(role, w, False)

    def exp(role, w=1.0):
        return Term(role, w, True)

    X0, X, T, Xh = pr.init, pr.safe, pr.target, pr.working_box
    out_X, X_T = pr.outside_safe, pr.safe_minus_target
    if cid in NEEDS_INVARIANT:
        omega = _region_or_missing(pr.invariant, cid)
        omega_T, omega_X = pr.invariant_minus_target, pr.invariant_minus_safe

    if cid == ConditionId.BC1:
        p, eps = s['p'], s['eps']
        return [
            clause('h1 <= 1-p on init', X0, -(1 - p), val('h1')),
            clause('E[h1] <= h1 on safe', X, 0.0, exp('h1'), val('h1', -1)),
            clause('h1 >= 1 outside safe', out_X, 1.0, val('h1', -1)),
            clause('h1 >= 0 on safe', X, 0.0, val('h1', -1)),
            clause('h2 >= 0 on working box', Xh, 0.0, val('h2', -1)),
            clause('E[h2] <= h2 - eps on safe\\target', X_T, eps, exp('h2'), val('h2', -1)),
        ]
    if cid == ConditionId.AS:
        p = s['p']
        return [
            clause('v >= p on init', X0, p, val('v', -1)),
            clause('v <= E[v] on safe\\target', X_T, 0.0, val('v'), exp('v', -1)),
            clause('v <= 1 on target', T, -1.0, val('v')),
            clause('v <= 0 outside safe', out_X, 0.0, val('v')),
        ]
    if cid == ConditionId.BC2:
        p, eps = s['p'], s['eps']
        level = 1.0 / (1.0 - p)
        return [
            clause('V >= 0 on invariant', omega, 0.0, val('V', -1)),
            clause('V <= 1 on init', X0, -1.0, val('V')),
            clause('V >= 1/(1-p) on invariant\\safe', omega_X, level, val('V', -1)),
            clause('E[V] <= V - eps on invariant\\target', omega_T, eps, exp('V'), val('V', -1),
                   guard=Guard('V', level, upper=True)),
        ]
    if cid == ConditionId.BC3:
        gamma, delta, lam = s['gamma'], s['delta'], s['lambda_prime']
        return [
            clause('V >= 0 on invariant', omega, 0.0, val('V', -1)),
            clause('V >= delta on invariant\\target', omega_T, delta, val('V', -1)),
            clause('V <= 1 on init', X0, -1.0, val('V')),
            clause("V >= lambda' on invariant\\safe", omega_X, lam, val('V', -1)),
            clause('E[V] <= gamma*V on invariant\\target', omega_T, 0.0, exp('V'), val('V', -gamma),
                   guard=Guard('V', lam, upper=True)),
        ]
    if cid in (ConditionId.BC4, ConditionId.BC4_SINGLETON):
        p, lam = s['p'], s['lambda']
        init = Box(instance.x0, instance.x0) if cid == ConditionId.BC4_SINGLETON else X0
        return [
            clause('h >= p on init', init, p, val('h', -1)),
            clause('h <= 0 outside safe', out_X, 0.0, val('h')),
            clause('h <= 1 on target', T, -1.0, val('h')),
            clause('h <= lambda*E[h] on safe\\target', X_T, 0.0, val('h'), exp('h', -lam)),
        ]
    if cid == ConditionId.BC4_RESTRICTED:
        p, lam = s['p'], s['lambda']
        return [
            clause('h >= p on init', X0, p, val('h', -1)),
            clause('h <= 0 on invariant\\safe', omega_X, 0.0, val('h')),
            clause('h <= 1 on invariant', omega, -1.0, val('h')),
            clause('h <= lambda*E[h] on safe\\target', X_T, 0.0, val('h'), exp('h', -lam),
                   guard=Guard('h', 0.0, upper=False)),
        ]
    if cid == ConditionId.BC5:
        p = s['p']
        return [
            clause('h1 >= p on init', X0, p, val('h1', -1)),
            clause('h1 <= 0 outside safe', out_X, 0.0, val('h1')),
            clause('h1 <= 1 on target', T, -1.0, val('h1')),
            clause('h1 <= E[h1] on safe\\target', X_T, 0.0, val('h1'), exp('h1', -1)),
            clause('h1 <= E[h2] - h2 on safe\\target', X_T, 0.0, val('h1'), exp('h2', -1), val('h2')),
        ]
    if cid == ConditionId.BC5_UPPER:
        p = s['p']
        return [
            clause('h1 <= p on init', X0, -p, val('h1')),
            clause('h1 >= 0 outside safe', out_X, 0.0, val('h1', -1)),
            clause('h1 >= 1 on target', T, 1.0, val('h1', -1)),
            clause('h1 >= E[h1] on safe\\target', X_T, 0.0, exp('h1'), val('h1', -1)),
            clause('h1 >= E[h2] - h2 on safe\\target', X_T, 0.0, exp('h2'), val('h2', -1), val('h1', -1)),
        ]
    if cid == ConditionId.BC5_DUAL:
        p = s['p']
        return [
            clause('h1 <= 1-p on init', X0, -(1 - p), val('h1')),
            clause('h1 >= 1 outside safe', out_X, 1.0, val('h1', -1)),
            clause('h1 >= 0 on target', T, 0.0, val('h1', -1)),
            clause('E[h1] <= h1 on safe\\target', X_T, 0.0, exp('h1'), val('h1', -1)),
            clause('E[h2] - h2 <= h1 - 1 on safe\\target', X_T, 1.0, exp('h2'), val('h2', -1), val('h1', -1)),
        ]
    raise ContractViolation(f"no clauses defined for {cid}")


def residual_at(clause: ResidualClause, x, quad_order: int = 8):
    """Residual at one state, or SKIPPED outside the clause's domain or guard"""
    x = np.asarray(x, dtype=float)
    if x.shape != (clause.problem.dim,):
        raise ContractViolation(f"state must have shape ({clause.problem.dim},)")
    if not bool(clause.applies(x)):
        return SKIPPED
    return float(clause.residual(x, quad_order))


@dataclass(frozen=True)
class CertifiedBound:
    kind: str  # 'lower' or 'upper'
    value: float

    def __str__(self):
        return f"{'Lower' if self.kind == 'lower' else 'Upper'}({self.value:g})"

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'value': self.value}


def certified_bound(instance: ConditionInstance) -> CertifiedBound:
    cid = instance.condition_id
    if cid == ConditionId.BC3:
        return CertifiedBound('lower', 1.0 - 1.0 / instance.scalars['lambda_prime'])
    if cid == ConditionId.BC5_UPPER:
        return CertifiedBound('upper', instance.scalars['p'])
    return CertifiedBound('lower', instance.scalars['p'])


def pointwise_bound(instance: ConditionInstance, x0) -> CertifiedBound:
    """BC1 certifies 1 - h1(x0) at each initial state, which is at least p"""
    if instance.condition_id == ConditionId.BC1:
        value = 1.0 - float(instance.certificates['h1'].evaluate(np.asarray(x0, dtype=float)))
        return CertifiedBound('lower', float(np.clip(value, 0.0, 1.0)))
    return certified_bound(instance)
