"""
Counterexample-guided synthesis of certificates.

Each round trains the trainable certificates on a finite sample set per
clause, then runs the grid verifier. Counterexamples, and the centers of
cells the verifier could not decide, join the sample sets for the next
round. A run is Feasible only when the verifier returns Certified.
"""
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, IO, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.config import Settings, get_settings
from app.core.certificates import Certificate, Network, Polynomial
from app.core.conditions import ConditionInstance, ResidualClause, clauses
from app.core.errors import ValidationError
from app.core.verifier import CERTIFIED, INCONCLUSIVE, VerificationVerdict, verify_adaptive

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MAX_BACKTRACKS = 20
MAX_MARGIN_SAMPLES = 2_000


@dataclass(frozen=True)
class CegisConfig:
    max_iterations: int = 10
    initial_samples: int = 500
    learner_steps: int = 400
    learner_step_size: float = 0.01
    batch_size: Optional[int] = None
    loss_margin: Optional[float] = None
    max_loss_margin: float = 0.05
    learner_quad_order: int = 4
    restarts: int = 3
    seed: int = 0
    resolution_schedule: Tuple[float, ...] = (0.02, 0.01, 0.005)
    quad_order: int = 8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1", field='max_iterations')
        if self.restarts < 1:
            raise ValidationError("restarts must be at least 1", field='restarts')
        if not self.resolution_schedule or min(self.resolution_schedule) <= 0:
            raise ValidationError("resolution schedule must hold positive values", field='resolution_schedule')
        if self.loss_margin is not None and self.loss_margin < 0:
            raise ValidationError("loss margin must be non-negative", field='loss_margin')
        object.__setattr__(self, 'resolution_schedule', tuple(float(r) for r in self.resolution_schedule))

    @classmethod
    def from_settings(cls, settings: Settings = None, **overrides) -> 'CegisConfig':
        settings = settings or get_settings()
        base = dict(
            max_iterations=settings.max_iterations,
            initial_samples=settings.initial_samples,
            learner_steps=settings.learner_steps,
            learner_step_size=settings.learner_step_size,
            max_loss_margin=settings.max_loss_margin,
            restarts=settings.restarts,
            seed=settings.seed,
            resolution_schedule=settings.resolution_schedule,
            quad_order=settings.quad_order,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], settings: Settings = None) -> 'CegisConfig':
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown keys {sorted(unknown)}", field='cegis')
        values = dict(data)
        if 'resolution_schedule' in values:
            values['resolution_schedule'] = tuple(values['resolution_schedule'])
        return cls.from_settings(settings, **values)

    def to_dict(self) -> Dict[str, Any]:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc['resolution_schedule'] = list(self.resolution_schedule)
        return doc


@dataclass
class CegisState:
    iteration: int
    samples: List[np.ndarray]
    certificates: Dict[str, Certificate]
    margins: List[float]
    loss_history: List[float] = field(default_factory=list)
    last_verdict: Optional[VerificationVerdict] = None
    restart: int = 0


@dataclass
class LearnerResult:
    certificates: Dict[str, Certificate]
    losses: List[float]
    stalled: bool


@dataclass
class CegisResult:
    feasible: bool
    certificates: Dict[str, Certificate]
    verdict: Optional[VerificationVerdict]
    state: CegisState
    telemetry: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def status(self) -> str:
        return 'Feasible' if self.feasible else 'Failed'


def trainable_roles(instance: ConditionInstance) -> List[str]:
    return sorted(role for role, cert in instance.certificates.items() if cert.trainable)


def _pack(certs: Mapping[str, Certificate], roles: Sequence[str]) -> np.ndarray:
    return np.concatenate([certs[r].parameters for r in roles]) if roles else np.empty(0)


def _unpack(certs: Mapping[str, Certificate], roles: Sequence[str], theta: np.ndarray) -> Dict[str, Certificate]:
    out = dict(certs)
    pos = 0
    for role in roles:
        size = certs[role].parameter_count
        out[role] = certs[role].with_parameters(theta[pos:pos + size])
        pos += size
    return out


def _clause_loss(clause: ResidualClause, points: np.ndarray, margin: float, quad_order: int,
                 roles: Sequence[str], sizes: Dict[str, int], with_grad: bool):
    if not len(points):
        return 0.0, None
    active = clause.applies(points)
    pts = points[active]
    if not len(pts):
        return 0.0, None
    values = clause.residual(pts, quad_order) + margin
    hinge = values > 0.0
    loss = float(values[hinge].sum())
    if not with_grad or not hinge.any():
        return loss, None
    grads = clause.parameter_gradients(pts[hinge], quad_order)
    parts = [grads[r].sum(axis=0) if r in grads else np.zeros(sizes[r]) for r in roles]
    return loss, np.concatenate(parts)


def hinge_loss(instance: ConditionInstance, samples: Sequence[np.ndarray], margins: Sequence[float],
               quad_order: int, with_grad: bool = True):
    """Sum over clauses and samples of max(0, residual + margin), and its parameter gradient"""
    roles = trainable_roles(instance)
    sizes = {r: instance.certificates[r].parameter_count for r in roles}
    total = 0.0
    grad = np.zeros(sum(sizes.values()))
    for clause, points, margin in zip(clauses(instance), samples, margins):
        loss, g = _clause_loss(clause, points, margin, quad_order, roles, sizes, with_grad)
        total += loss
        if g is not None:
            grad += g
    return total, grad


def learner_step(instance: ConditionInstance, state: CegisState, config: CegisConfig) -> LearnerResult:
    """Adam on the hinge loss with backtracking, so the loss never increases"""
    roles = trainable_roles(instance)
    current = instance.with_certificates(state.certificates)
    if not roles:
        loss, _ = hinge_loss(current, state.samples, state.margins, config.learner_quad_order, with_grad=False)
        return LearnerResult(dict(state.certificates), [loss], stalled=loss > 0)

    rng = np.random.default_rng([config.seed, state.restart, state.iteration, 5])
    theta = _pack(state.certificates, roles)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = ADAM_BETAS
    losses: List[float] = []
    stalled = False

    def batch():
        if config.batch_size is None:
            return state.samples
        return [s[rng.choice(len(s), size=min(len(s), config.batch_size), replace=False)] if len(s) else s
                for s in state.samples]

    for t in range(1, config.learner_steps + 1):
        samples = batch()
        loss, grad = hinge_loss(current, samples, state.margins, config.learner_quad_order)
        losses.append(loss)
        if loss == 0.0:
            break
        if not np.any(grad):
            stalled = True
            break
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        direction = (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + ADAM_EPS)
        step = config.learner_step_size
        for _ in range(MAX_BACKTRACKS):
            candidate = instance.with_certificates(_unpack(current.certificates, roles, theta - step * direction))
            new_loss, _ = hinge_loss(candidate, samples, state.margins, config.learner_quad_order, with_grad=False)
            if new_loss <= loss:
                break
            step *= 0.5
        else:
            stalled = True
            break
        current = candidate
        theta = _pack(current.certificates, roles)
    else:
        final, _ = hinge_loss(current, state.samples, state.margins, config.learner_quad_order, with_grad=False)
        losses.append(final)

    if stalled:
        logger.info(f"Learner stalled at loss {losses[-1]:.4g} after {len(losses)} steps")
    return LearnerResult(dict(current.certificates), losses, stalled)


def initial_samples(instance: ConditionInstance, count: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Uniform samples per clause domain plus the domain's corner points"""
    out = []
    for clause in clauses(instance):
        if clause.is_vacuous():
            out.append(np.empty((0, instance.problem.dim)))
            continue
        pts = clause.domain.sample(rng, count)
        corners = clause.domain.corner_points()
        corners = corners[clause.domain.contains(corners)] if len(corners) else corners
        out.append(np.concatenate([pts, corners], axis=0) if len(corners) else pts)
    return out


def loss_margins(instance: ConditionInstance, config: CegisConfig) -> List[float]:
    """Per-clause margin: the verifier's L * radius at the first resolution, capped"""
    if config.loss_margin is not None:
        return [config.loss_margin] * len(clauses(instance))
    radius = max(config.resolution_schedule) / 2.0
    margins = []
    for clause in clauses(instance):
        if clause.is_vacuous():
            margins.append(0.0)
            continue
        box = clause.domain.bounding_box()
        lip = float(np.max(clause.lipschitz_bound(box.lo[None, :], box.hi[None, :])))
        margins.append(float(min(config.max_loss_margin, lip * radius)))
    return margins


def reinitialize(cert: Certificate, rng: np.random.Generator) -> Certificate:
    if isinstance(cert, Network):
        return Network.random(cert.layers, rng)
    if isinstance(cert, Polynomial):
        return cert.with_parameters(rng.normal(0.0, 0.1, size=cert.parameter_count))
    return cert


def _write_telemetry(stream: Optional[IO], row: Dict[str, Any]) -> None:
    if stream is not None:
        stream.write(json.dumps(row) + '\n')
        stream.flush()


def confirmed_counterexamples(clause: ResidualClause, report, quad_order: int) -> Tuple[np.ndarray, int]:
    """A clause's reported counterexamples that still violate it, and how many did not"""
    if not report.counterexamples:
        return np.empty((0, clause.problem.dim)), 0
    points = np.array([c.point for c in report.counterexamples])
    still_bad = clause.residual(points, quad_order) > 0.0
    return points[still_bad], int((~still_bad).sum())


def run_cegis(instance: ConditionInstance, config: CegisConfig = None, settings: Settings = None,
              telemetry: Optional[IO] = None) -> CegisResult:
    settings = settings or get_settings()
    config = config or CegisConfig.from_settings(settings)
    rows: List[Dict[str, Any]] = []
    state = None
    started = time.perf_counter()

    for restart in range(config.restarts):
        rng = np.random.default_rng([config.seed, restart])
        certs = dict(instance.certificates)
        if restart:
            certs = {role: reinitialize(c, rng) for role, c in certs.items()}
        current = instance.with_certificates(certs)
        state = CegisState(0, initial_samples(current, config.initial_samples, rng), certs,
                           loss_margins(current, config), restart=restart)

        for iteration in range(1, config.max_iterations + 1):
            state.iteration = iteration
            learned = learner_step(instance, state, config)
            state.certificates = learned.certificates
            state.loss_history.append(learned.losses[-1])
            current = instance.with_certificates(state.certificates)

            verdict = verify_adaptive(current, config.resolution_schedule, config.quad_order, settings, config.seed)
            state.last_verdict = verdict
            current_clauses = clauses(current)
            fresh = [confirmed_counterexamples(clause, report, config.quad_order)
                     for clause, report in zip(current_clauses, verdict.clauses)]
            stale = sum(report_stale for _, report_stale in fresh)
            row = {
                'restart': restart,
                'iteration': iteration,
                'loss': learned.losses[-1],
                'learner_steps': len(learned.losses),
                'stalled': learned.stalled,
                'status': verdict.status,
                'resolution': verdict.resolution,
                'counterexamples': len(verdict.counterexamples),
                'stale_counterexamples': stale,
                'evaluations': verdict.evaluations,
                'elapsed_seconds': round(time.perf_counter() - started, 3),
            }
            rows.append(row)
            _write_telemetry(telemetry, row)
            logger.info(f"CEGIS {instance.describe()} restart {restart} iteration {iteration}: "
                        f"loss {row['loss']:.4g}, {verdict.status}, {row['counterexamples']} counterexamples")
            if stale:
                logger.error(f"{stale} counterexamples no longer violate under the certificates that produced them")

            if verdict.status == CERTIFIED:
                return CegisResult(True, dict(state.certificates), verdict, state, rows)

            for index, ((points, _), report) in enumerate(zip(fresh, verdict.clauses)):
                additions = [points] if len(points) else []
                if report.status == INCONCLUSIVE and report.inconclusive is not None and len(report.inconclusive):
                    additions.append(report.inconclusive.centers[:MAX_MARGIN_SAMPLES])
                if additions:
                    state.samples[index] = np.concatenate([state.samples[index], *additions], axis=0)

    logger.info(f"CEGIS {instance.describe()} failed after {config.restarts} restarts")
    return CegisResult(False, dict(state.certificates), state.last_verdict, state, rows)


@dataclass
class LambdaSweepResult:
    chosen: Optional[float]
    result: Optional[CegisResult]
    attempts: List[Tuple[float, str]]


def lambda_sweep(instance: ConditionInstance, lambdas: Sequence[float], config: CegisConfig = None,
                 settings: Settings = None, telemetry: Optional[IO] = None) -> LambdaSweepResult:
    """Try lambda values in ascending order and stop at the first feasible one"""
    if 'lambda' not in instance.scalars:
        raise ValidationError(f"{instance.condition_id.value} has no lambda to sweep", field='lambda')
    attempts = []
    last = None
    for lam in sorted(lambdas):
        result = run_cegis(instance.with_scalars(**{'lambda': lam}), config, settings, telemetry)
        attempts.append((lam, result.status))
        last = result
        if result.feasible:
            return LambdaSweepResult(lam, result, attempts)
    return LambdaSweepResult(None, last, attempts)
