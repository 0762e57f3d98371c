"""
Independent probability estimates.

Monte Carlo: N seeded trajectories truncated at horizon K, with exact
Clopper-Pearson intervals. The truncated reach-avoid estimate undercounts
the infinite-horizon probability only through the undecided fraction u,
so lo bounds it from below and hi + u from above.

Value iteration: for state dimension <= 2, iterates
V_{k+1} = 1_T + 1_{X\\T} E_θ[V_k(f(x, θ))] on a grid over the working box.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import beta

from app.config import Settings, get_settings
from app.core.conditions import CertifiedBound
from app.core.errors import ContractViolation, UnsupportedDimensionError
from app.core.regions import Region
from app.core.system import Outcome, ReachAvoidProblem, simulate_batch

logger = logging.getLogger(__name__)


def clopper_pearson(successes: int, trials: int, alpha: float) -> Tuple[float, float]:
    """Exact two-sided (1 - alpha) interval for a binomial proportion"""
    if trials <= 0:
        raise ContractViolation("need at least one trial")
    lo = 0.0 if successes == 0 else float(beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


@dataclass(frozen=True)
class ProbabilityEstimate:
    p_hat: float
    lo: float
    hi: float
    undecided: float
    n: int
    horizon: int
    alpha: float
    seed: int
    x0: Tuple[float, ...] = ()
    kind: str = 'reach_avoid'

    def upper_envelope(self) -> float:
        """Largest infinite-horizon value consistent with this estimate"""
        return min(1.0, self.hi + self.undecided)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'x0': list(self.x0),
            'p_hat': self.p_hat,
            'lo': self.lo,
            'hi': self.hi,
            'undecided': self.undecided,
            'N': self.n,
            'K': self.horizon,
            'alpha': self.alpha,
            'seed': self.seed,
        }


def _run(problem: ReachAvoidProblem, x0, n: int, horizon: int, seed: int, stay: Region,
         goal: Optional[Region], batch_size: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ContractViolation(f"initial state must have shape ({problem.dim},)")
    counts = np.zeros(3, dtype=np.int64)
    for start in range(0, n, batch_size):
        indices = range(start, min(start + batch_size, n))
        outcome, _ = simulate_batch(problem.system, x0, horizon, seed, indices, stay=stay, goal=goal)
        counts += np.bincount(outcome, minlength=3)
    return counts


def estimate_reach_avoid(problem: ReachAvoidProblem, x0, n: int = None, horizon: int = None, alpha: float = None,
                         seed: int = None, settings: Settings = None) -> ProbabilityEstimate:
    settings = settings or get_settings()
    n = settings.mc_samples if n is None else n
    horizon = settings.mc_horizon if horizon is None else horizon
    alpha = settings.mc_alpha if alpha is None else alpha
    seed = settings.seed if seed is None else seed
    if n < 100:
        raise ContractViolation(f"need at least 100 trajectories, got {n}")
    if not bool(problem.init.contains(np.asarray(x0, dtype=float))):
        raise ContractViolation(f"x0 = {list(np.ravel(x0))} is not an initial state")

    counts = _run(problem, x0, n, horizon, seed, problem.safe, problem.target, settings.mc_batch_size)
    reached = int(counts[Outcome.REACHED_TARGET])
    lo, hi = clopper_pearson(reached, n, alpha)
    est = ProbabilityEstimate(reached / n, lo, hi, int(counts[Outcome.UNDECIDED]) / n, n, horizon, alpha, seed,
                              tuple(float(v) for v in np.ravel(x0)))
    logger.info(f"Reach-avoid estimate for {problem.name} at x0={list(est.x0)}: "
                f"{est.p_hat:.4f} [{est.lo:.4f}, {est.hi:.4f}], undecided {est.undecided:.4f}")
    return est


def stay_region(problem: ReachAvoidProblem, region: Union[str, Region]) -> Region:
    if isinstance(region, Region):
        return region
    if region in ('safe', 'X'):
        return problem.safe
    if region in ('safe_minus_target', 'X\\T'):
        return problem.safe_minus_target
    raise ContractViolation(f"stay region must be 'safe' or 'safe_minus_target', got {region!r}")


def estimate_stay_probability(problem: ReachAvoidProblem, x0, region: Union[str, Region] = 'safe', n: int = None,
                              horizon: int = None, alpha: float = None, seed: int = None,
                              settings: Settings = None) -> ProbabilityEstimate:
    """Probability of remaining in `region` for all steps up to K"""
    settings = settings or get_settings()
    n = settings.mc_samples if n is None else n
    horizon = settings.mc_horizon if horizon is None else horizon
    alpha = settings.mc_alpha if alpha is None else alpha
    seed = settings.seed if seed is None else seed
    counts = _run(problem, x0, n, horizon, seed, stay_region(problem, region), None, settings.mc_batch_size)
    stayed = int(counts[Outcome.UNDECIDED])
    lo, hi = clopper_pearson(stayed, n, alpha)
    return ProbabilityEstimate(stayed / n, lo, hi, 0.0, n, horizon, alpha, seed,
                               tuple(float(v) for v in np.ravel(x0)), kind='stay')


def sandwich_holds(bound: CertifiedBound, estimate: ProbabilityEstimate) -> bool:
    """A certified bound must be compatible with the Monte Carlo interval"""
    if bound.kind == 'lower':
        return estimate.upper_envelope() >= bound.value
    return estimate.lo <= bound.value


@dataclass
class SafetyCheckRow:
    x0: Tuple[float, ...]
    bound: float
    estimate: ProbabilityEstimate
    consistent: bool


def safety_check(problem: ReachAvoidProblem, h1, x0s: Sequence, n: int = None, horizon: int = None,
                 alpha: float = None, seed: int = None, settings: Settings = None) -> List[SafetyCheckRow]:
    """Staying in X forever has probability >= 1 - h1(x0) under BC1; the K-step estimate must allow it"""
    rows = []
    for i, x0 in enumerate(x0s):
        x0 = np.asarray(x0, dtype=float)
        bound = float(np.clip(1.0 - float(h1.evaluate(x0)), 0.0, 1.0))
        est = estimate_stay_probability(problem, x0, 'safe', n, horizon, alpha,
                                        None if seed is None else seed + i, settings)
        rows.append(SafetyCheckRow(tuple(x0.tolist()), bound, est, est.hi >= bound))
        if est.hi < bound:
            logger.warning(f"Safety bound {bound:.4f} at x0={x0.tolist()} exceeds stay estimate upper CI {est.hi:.4f}")
    return rows


@dataclass
class PrecheckResult:
    passed: bool
    threshold: float
    estimates: List[ProbabilityEstimate] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {'passed': self.passed, 'threshold': self.threshold, 'estimates': [e.to_dict() for e in self.estimates]}


def as_precheck(problem: ReachAvoidProblem, x0s: Sequence, horizon: int = None, n: int = None,
                alpha: float = None, threshold: float = None, seed: int = None,
                settings: Settings = None) -> PrecheckResult:
    """
    Empirical check that trajectories do not linger in X\\T forever.

    AS results are conditional on this hypothesis, which no finite run can
    prove; the K-step stay estimate's upper CI bound must be below threshold.
    """
    settings = settings or get_settings()
    threshold = settings.as_precheck_threshold if threshold is None else threshold
    estimates = [estimate_stay_probability(problem, x0, 'safe_minus_target', n, horizon, alpha, seed, settings)
                 for x0 in x0s]
    passed = all(e.hi < threshold for e in estimates)
    if not passed:
        logger.warning(f"AS pre-check failed for {problem.name}: K-step stay in X\\T above {threshold}")
    return PrecheckResult(passed, threshold, estimates)


def _midpoint_rule(problem: ReachAvoidProblem, points: int) -> Tuple[np.ndarray, np.ndarray]:
    dist = problem.system.disturbance
    axes = [dist.lower[i] + (np.arange(points) + 0.5) * (dist.upper[i] - dist.lower[i]) / points
            for i in range(dist.dim)]
    grids = np.meshgrid(*axes, indexing='ij')
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = dist.density(nodes)
    return nodes, weights / weights.sum()


@dataclass
class ValueIterationOracle:
    axes: Tuple[np.ndarray, ...]
    values: np.ndarray
    horizon: int
    problem: ReachAvoidProblem = field(repr=False)
    history: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def value(self, x0) -> float:
        interp = RegularGridInterpolator(self.axes, self.values, bounds_error=False, fill_value=0.0)
        return float(interp(np.atleast_2d(np.asarray(x0, dtype=float)))[0])

    def _cell_corners(self, x0) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
        x0 = np.asarray(x0, dtype=float)
        idx = []
        for axis, v in zip(self.axes, x0):
            i = int(np.clip(np.searchsorted(axis, v, side='right') - 1, 0, len(axis) - 2))
            idx.append((i, i + 1))
        corners = np.array(np.meshgrid(*idx, indexing='ij')).reshape(len(idx), -1).T
        return corners, tuple(corners.T)

    def bounds(self, x0) -> Tuple[float, float]:
        """Min and max of the K-th iterate over the grid cell containing x0"""
        _, index = self._cell_corners(x0)
        corner_values = self.values[index]
        return float(corner_values.min()), float(corner_values.max())

    def straddles(self, x0) -> bool:
        """Whether the cell around x0 crosses the boundary of X or T"""
        corners, _ = self._cell_corners(x0)
        pts = np.stack([self.axes[d][corners[:, d]] for d in range(len(self.axes))], axis=-1)
        safe = self.problem.safe.contains(pts)
        target = self.problem.target.contains(pts)
        return bool(safe.any() != safe.all() or target.any() != target.all())

    def __call__(self, x0) -> Tuple[float, float]:
        return self.bounds(x0)


def value_iteration_oracle(problem: ReachAvoidProblem, step: float, horizon: int,
                           disturbance_points: int = None, settings: Settings = None,
                           keep_history: bool = False) -> ValueIterationOracle:
    settings = settings or get_settings()
    if problem.dim > 2:
        raise UnsupportedDimensionError(f"value iteration supports state dimension <= 2, got {problem.dim}")
    if not step > 0:
        raise ContractViolation(f"grid step must be positive, got {step}")
    points = settings.vi_disturbance_points if disturbance_points is None else disturbance_points

    box = problem.working_box
    axes = tuple(np.linspace(a, b, max(2, int(np.ceil((b - a) / step)) + 1)) for a, b in zip(box.lo, box.hi))
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing='ij')], axis=-1)
    shape = tuple(len(a) for a in axes)

    in_target = problem.target.contains(mesh)
    continuing = problem.safe.contains(mesh) & ~in_target
    nodes, weights = _midpoint_rule(problem, points)
    successors = problem.system.evaluate(mesh[continuing][:, None, :], nodes)
    flat_successors = successors.reshape(-1, problem.dim)

    values = in_target.astype(float)
    history = [values.reshape(shape).copy()] if keep_history else None
    for _ in range(horizon):
        interp = RegularGridInterpolator(axes, values.reshape(shape), bounds_error=False, fill_value=0.0)
        expected = interp(flat_successors).reshape(successors.shape[:2]) @ weights
        nxt = in_target.astype(float)
        nxt[continuing] = expected
        values = nxt
        if keep_history:
            history.append(values.reshape(shape).copy())
    logger.info(f"Value iteration on {problem.name}: {mesh.shape[0]} nodes, {len(weights)} disturbance points, "
                f"K={horizon}")
    return ValueIterationOracle(axes, values.reshape(shape), horizon, problem, history)
