"""
Stochastic difference equations x(k+1) = f(x(k), θ(k)) and reach-avoid problems.

θ(k) are i.i.d. draws from the system's disturbance distribution. f is an
expression tree per state coordinate, so the model supports point
evaluation, interval images over boxes and symbolic Jacobians.
"""
import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.distributions import DisturbanceDistribution
from app.core.errors import ContractViolation, ExpressionSyntaxError, ValidationError
from app.core.expression import STATE, Expr, jacobian
from app.core.interval import Interval
from app.core.parser import expression_parser
from app.core.regions import Box, Complement, Difference, Region, region_from_dict

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SystemModel:
    state_dim: int
    disturbance_dim: int
    dynamics: Tuple[Expr, ...]
    disturbance: DisturbanceDistribution

    def __post_init__(self):
        object.__setattr__(self, 'dynamics', tuple(self.dynamics))
        if self.state_dim < 1 or self.disturbance_dim < 1:
            raise ValidationError("dimensions must be positive", field='system.dim')
        if len(self.dynamics) != self.state_dim:
            raise ValidationError(f"expected {self.state_dim} dynamics expressions, got {len(self.dynamics)}",
                                  field='system.dynamics')
        if self.disturbance.dim != self.disturbance_dim:
            raise ValidationError(f"support has dimension {self.disturbance.dim}, system expects {self.disturbance_dim}",
                                  field='disturbance.support')

    @cached_property
    def state_jacobian(self):
        return jacobian(self.dynamics, STATE, self.state_dim)

    def _check(self, x: np.ndarray, theta: np.ndarray):
        if x.shape[-1] != self.state_dim:
            raise ContractViolation(f"state has dimension {x.shape[-1]}, expected {self.state_dim}")
        if theta.shape[-1] != self.disturbance_dim:
            raise ContractViolation(f"disturbance has dimension {theta.shape[-1]}, expected {self.disturbance_dim}")

    def evaluate(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """f(x, θ) on broadcastable arrays shaped (..., n) and (..., m)"""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        self._check(x, theta)
        shape = np.broadcast_shapes(x.shape[:-1], theta.shape[:-1])
        out = [np.broadcast_to(e.evaluate(x, theta), shape) for e in self.dynamics]
        return np.stack(out, axis=-1)

    def successors(self, x: np.ndarray, quad_order: int) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature successors f(x, θ_q), shaped (..., Q, n), with weights (Q,)"""
        x = np.asarray(x, dtype=float)
        nodes, weights = self.disturbance.quadrature(quad_order)
        return self.evaluate(x[..., None, :], nodes), weights

    def expectation(self, g: Callable[[np.ndarray], np.ndarray], x: np.ndarray, quad_order: int) -> np.ndarray:
        points, weights = self.successors(x, quad_order)
        return np.asarray(g(points)) @ weights

    def _interval_args(self, lo: np.ndarray, hi: np.ndarray):
        xs = [Interval(lo[..., i], hi[..., i]) for i in range(self.state_dim)]
        thetas = [Interval(a, b) for a, b in zip(self.disturbance.lower, self.disturbance.upper)]
        return xs, thetas

    def image_box(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Enclosure of f(cell, Θ) per cell; lo/hi shaped (N, n)"""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        xs, thetas = self._interval_args(lo, hi)
        shape = lo.shape[:-1]
        out_lo, out_hi = [], []
        for e in self.dynamics:
            iv = e.evaluate_interval(xs, thetas)
            out_lo.append(np.broadcast_to(iv.lo, shape))
            out_hi.append(np.broadcast_to(iv.hi, shape))
        return np.stack(out_lo, axis=-1), np.stack(out_hi, axis=-1)

    def lipschitz_bound(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Infinity-norm Lipschitz constant of x -> f(x, θ) over each cell, uniform in θ ∈ Θ"""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        xs, thetas = self._interval_args(lo, hi)
        shape = lo.shape[:-1]
        rows = []
        for row in self.state_jacobian:
            total = np.zeros(shape)
            for entry in row:
                if entry.is_const(0.0):
                    continue
                total = total + np.broadcast_to(entry.evaluate_interval(xs, thetas).mag(), shape)
            rows.append(total)
        return np.max(np.stack(rows, axis=-1), axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {'dim': self.state_dim, 'dynamics': [str(e) for e in self.dynamics]}


def evaluate_dynamics(system: SystemModel, x, theta) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.ndim != 1 or theta.ndim != 1:
        raise ContractViolation("evaluate_dynamics takes a single state and disturbance vector")
    return system.evaluate(x, theta)


def expectation(system: SystemModel, g, x, quad_order: int = 8):
    """E_θ[g(f(x, θ))] by tensor-product quadrature; g is a certificate or a callable"""
    fn = g.evaluate if hasattr(g, 'evaluate') else g
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != system.state_dim:
        raise ContractViolation(f"state has dimension {x.shape[-1]}, expected {system.state_dim}")
    value = system.expectation(fn, x, quad_order)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True, eq=False)
class ReachAvoidProblem:
    name: str
    system: SystemModel
    init: Region
    safe: Region
    target: Region
    threshold: float
    working_box: Box
    invariant: Optional[Region] = None
    description: str = ''

    def __post_init__(self):
        n = self.system.state_dim
        for label in ('init', 'safe', 'target', 'working_box', 'invariant'):
            region = getattr(self, label)
            if region is not None and region.dim != n:
                raise ValidationError(f"region has dimension {region.dim}, system has {n}", field=f"regions.{label}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValidationError(f"threshold {self.threshold} outside (0, 1]", field='threshold')

    @property
    def dim(self) -> int:
        return self.system.state_dim

    # Derived domains. Complements are taken within the working box.

    @cached_property
    def safe_minus_target(self) -> Region:
        return Difference(self.safe, self.target)

    @cached_property
    def outside_safe(self) -> Region:
        return Complement(self.working_box, self.safe)

    @cached_property
    def invariant_minus_target(self) -> Optional[Region]:
        return None if self.invariant is None else Difference(self.invariant, self.target)

    @cached_property
    def invariant_minus_safe(self) -> Optional[Region]:
        return None if self.invariant is None else Difference(self.invariant, self.safe)

    def with_threshold(self, threshold: float) -> 'ReachAvoidProblem':
        return ReachAvoidProblem(self.name, self.system, self.init, self.safe, self.target, threshold,
                                 self.working_box, self.invariant, self.description)

    def with_init(self, init: Region) -> 'ReachAvoidProblem':
        return ReachAvoidProblem(self.name, self.system, init, self.safe, self.target, self.threshold,
                                 self.working_box, self.invariant, self.description)

    def check_by_sampling(self, samples: int = 100_000, seed: int = 0) -> None:
        """Sample the set-inclusion assumptions; raises ValidationError on the first failure"""
        rng = np.random.default_rng([seed, 7])
        dist = self.system.disturbance

        for label in ('init', 'safe', 'target', 'invariant'):
            region = getattr(self, label)
            if region is None:
                continue
            box = region.bounding_box()
            pad = 0.5 * (box.hi - box.lo) + 1e-6
            probe = box.lo - pad + rng.random((samples, self.dim)) * (box.hi - box.lo + 2 * pad)
            escaped = region.contains(probe) & ~box.contains(probe)
            if np.any(escaped):
                raise ValidationError(f"member {probe[escaped][0].tolist()} lies outside the bounding box",
                                      field=f"regions.{label}")

        x0 = self.init.sample(rng, samples)
        bad = ~self.safe_minus_target.contains(x0)
        if np.any(bad):
            raise ValidationError(f"initial state {x0[bad][0].tolist()} is not in safe minus target",
                                  field='regions.init')

        t = self.target.sample(rng, samples)
        bad = ~self.safe.contains(t)
        if np.any(bad):
            raise ValidationError(f"target state {t[bad][0].tolist()} is not in the safe set", field='regions.target')

        x = self.safe.sample(rng, samples)
        bad = ~self.working_box.contains(x)
        if np.any(bad):
            raise ValidationError(f"safe state {x[bad][0].tolist()} is outside the working box",
                                  field='regions.working_box')
        nxt = self.system.evaluate(x, dist.sample(rng, len(x)))
        bad = ~self.working_box.contains(nxt)
        if np.any(bad):
            raise ValidationError(f"one-step successor {nxt[bad][0].tolist()} of a safe state leaves the working box",
                                  field='regions.working_box')

        if self.invariant is not None:
            omega = self.invariant.sample(rng, samples)
            nxt = self.system.evaluate(omega, dist.sample(rng, len(omega)))
            bad = ~self.invariant.contains(nxt)
            if np.any(bad):
                raise ValidationError(f"successor {nxt[bad][0].tolist()} leaves the invariant set",
                                      field='regions.invariant')
            bad = ~self.invariant.contains(x)
            if np.any(bad):
                raise ValidationError(f"safe state {x[bad][0].tolist()} is outside the invariant set",
                                      field='regions.invariant')
        logger.debug(f"Problem {self.name}: sampling checks passed with {samples} samples")

    def to_dict(self) -> Dict[str, Any]:
        regions = {
            'init': self.init.to_dict(),
            'safe': self.safe.to_dict(),
            'target': self.target.to_dict(),
            'working_box': self.working_box.to_dict(),
        }
        if self.invariant is not None:
            regions['invariant'] = self.invariant.to_dict()
        doc = {
            'name': self.name,
            'system': self.system.to_dict(),
            'disturbance': self.system.disturbance.to_dict(),
            'regions': regions,
            'threshold': self.threshold,
        }
        if self.description:
            doc['description'] = self.description
        return doc

    @classmethod
    def from_dict(cls, data: Dict[str, Any], name: str = None) -> 'ReachAvoidProblem':
        try:
            system_doc = data['system']
            regions = data['regions']
            n = int(system_doc['dim'])
            disturbance = DisturbanceDistribution.from_dict(data['disturbance'])
        except KeyError as e:
            raise ValidationError(f"missing key {e.args[0]!r}", field='problem')
        texts = system_doc.get('dynamics')
        if not isinstance(texts, list):
            raise ValidationError("expected a list of expression strings", field='system.dynamics')
        dynamics = []
        for i, text in enumerate(texts):
            try:
                dynamics.append(expression_parser.parse(text, n, disturbance.dim))
            except ExpressionSyntaxError as e:
                raise ValidationError(str(e), field=f"system.dynamics[{i}]")
        system = SystemModel(n, disturbance.dim, tuple(dynamics), disturbance)

        def region(key, required=True):
            if key not in regions:
                if required:
                    raise ValidationError("missing region", field=f"regions.{key}")
                return None
            return region_from_dict(regions[key], field=f"regions.{key}")

        working_box = region('working_box')
        if not isinstance(working_box, Box):
            raise ValidationError("working box must be a box", field='regions.working_box')
        return cls(
            name=name or data.get('name', 'problem'),
            system=system,
            init=region('init'),
            safe=region('safe'),
            target=region('target'),
            threshold=float(data.get('threshold', 1.0)),
            working_box=working_box,
            invariant=region('invariant', required=False),
            description=data.get('description', ''),
        )


class Outcome(enum.IntEnum):
    UNDECIDED = 0
    REACHED_TARGET = 1
    LEFT_SAFE = 2


@dataclass(frozen=True)
class TrajectoryOutcome:
    outcome: Outcome
    step: Optional[int]
    states: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {'outcome': self.outcome.name, 'step': self.step}


def simulate_batch(system: SystemModel, x0: np.ndarray, horizon: int, seed: int, indices: Sequence[int],
                   stay: Region, goal: Optional[Region] = None,
                   record: bool = False) -> Union[Tuple[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Simulate one trajectory per row of x0 for up to `horizon` steps.

    Trajectory i draws all of its disturbances from default_rng([seed, indices[i]]),
    so results are independent of how trajectories are batched. A trajectory
    stops when it enters `goal` (REACHED_TARGET) or leaves `stay` (LEFT_SAFE).
    Returns (outcome codes, stopping steps with -1 for undecided[, states]).
    """
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (len(indices), system.state_dim)))
    count = len(indices)
    uniforms = np.empty((count, horizon, system.disturbance_dim))
    for row, index in enumerate(indices):
        uniforms[row] = np.random.default_rng([seed, int(index)]).random((horizon, system.disturbance_dim))

    outcome = np.full(count, Outcome.UNDECIDED, dtype=np.int8)
    step = np.full(count, -1, dtype=np.int64)
    path = np.full((count, horizon + 1, system.state_dim), np.nan) if record else None

    def settle(k, active):
        hit = np.zeros(count, dtype=bool)
        if goal is not None:
            hit[active] = goal.contains(x[active])
        left = np.zeros(count, dtype=bool)
        left[active] = ~stay.contains(x[active]) & ~hit[active]
        outcome[hit] = Outcome.REACHED_TARGET
        outcome[left] = Outcome.LEFT_SAFE
        step[hit | left] = k
        return active & ~hit & ~left

    active = settle(0, np.ones(count, dtype=bool))
    if record:
        path[:, 0] = x
    for k in range(1, horizon + 1):
        if not active.any():
            break
        theta = system.disturbance.from_uniform(uniforms[active, k - 1])
        x[active] = system.evaluate(x[active], theta)
        if record:
            path[active, k] = x[active]
        active = settle(k, active)
    if record:
        return outcome, step, path
    return outcome, step


def sample_trajectory(problem: ReachAvoidProblem, x0, horizon: int, seed: int, index: int = 0) -> TrajectoryOutcome:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ContractViolation(f"initial state must have shape ({problem.dim},)")
    if horizon < 1:
        raise ContractViolation("horizon must be at least 1")
    outcome, step, path = simulate_batch(problem.system, x0[None, :], horizon, seed, [index],
                                         stay=problem.safe, goal=problem.target, record=True)
    kind = Outcome(int(outcome[0]))
    last = int(step[0]) if kind != Outcome.UNDECIDED else horizon
    return TrajectoryOutcome(kind, None if kind == Outcome.UNDECIDED else int(step[0]), path[0, :last + 1])
