"""
Grid verification of condition instances.

Each clause domain is covered with cells (region_grid). A cell passes when

    residual(center) + L_cell * radius <= 0

where L_cell bounds the residual's infinity-norm Lipschitz constant on the
cell. Cells that fail are searched for an exact counterexample (center,
2n axis points, a few seeded random points). A cell is skipped by a guard
only when the guard provably fails on the whole cell.

Work is split into fixed chunks of cells whose random streams are derived
from (seed, clause index, chunk index, pass), so verdicts do not depend on
the number of workers.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.config import Settings, get_settings
from app.core.conditions import ConditionInstance, ResidualClause, clauses
from app.core.errors import ContractViolation, ResourceLimitError
from app.core.regions import CellGrid, region_grid, split_cells

logger = logging.getLogger(__name__)

CERTIFIED = 'Certified'
VIOLATED = 'Violated'
INCONCLUSIVE = 'Inconclusive'
VACUOUS = 'Vacuous'

EXIT_CODES = {CERTIFIED: 0, VIOLATED: 1, INCONCLUSIVE: 2}


@dataclass(frozen=True)
class Counterexample:
    clause: str
    point: Tuple[float, ...]
    residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {'clause': self.clause, 'point': list(self.point), 'residual': self.residual}


@dataclass
class ClauseReport:
    label: str
    description: str
    status: str
    worst_margin: float = -np.inf
    cells_checked: int = 0
    cells_skipped_by_guard: int = 0
    cells_inconclusive: int = 0
    evaluations: int = 0
    counterexamples: List[Counterexample] = field(default_factory=list)
    inconclusive: Optional[CellGrid] = field(default=None, repr=False)

    def to_dict(self, max_reported: int = 50) -> Dict[str, Any]:
        return {
            'label': self.label,
            'description': self.description,
            'status': self.status,
            'worst_margin': None if not np.isfinite(self.worst_margin) else float(self.worst_margin),
            'cells_checked': self.cells_checked,
            'cells_skipped_by_guard': self.cells_skipped_by_guard,
            'cells_inconclusive': self.cells_inconclusive,
            'counterexample_count': len(self.counterexamples),
            'counterexamples': [c.to_dict() for c in self.counterexamples[:max_reported]],
        }


@dataclass
class VerificationVerdict:
    status: str
    condition: str
    resolution: float
    quad_order: int
    clauses: List[ClauseReport]
    evaluations: int
    seed: int = 0
    elapsed: float = 0.0

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    @property
    def counterexamples(self) -> List[Counterexample]:
        return [c for report in self.clauses for c in report.counterexamples]

    def to_dict(self, max_reported: int = 50) -> Dict[str, Any]:
        return {
            'schema_version': 1,
            'status': self.status,
            'condition': self.condition,
            'resolution': self.resolution,
            'quad_order': self.quad_order,
            'evaluations': self.evaluations,
            'seed': self.seed,
            'elapsed_seconds': round(self.elapsed, 3),
            'clauses': [c.to_dict(max_reported) for c in self.clauses],
        }


@dataclass
class _ChunkResult:
    checked: int
    skipped: int
    worst_margin: float
    evaluations: int
    counterexamples: List[Tuple[Tuple[float, ...], float]]
    inconclusive: CellGrid


def _probe_points(centers: np.ndarray, halves: np.ndarray, rng: np.random.Generator, random_points: int) -> np.ndarray:
    """Center, the 2n axis extreme points and seeded random points per cell: (F, 1 + 2n + k, n)"""
    count, n = centers.shape
    axis = np.eye(n)[None, :, :] * halves[:, None, :]
    rand = centers[:, None, :] + (2.0 * rng.random((count, random_points, n)) - 1.0) * halves[:, None, :]
    return np.concatenate([centers[:, None, :], centers[:, None, :] + axis, centers[:, None, :] - axis, rand], axis=1)


def _check_chunk(clause: ResidualClause, centers: np.ndarray, halves: np.ndarray, quad_order: int,
                 seed_key: Tuple[int, ...], random_points: int) -> _ChunkResult:
    lo, hi = centers - halves, centers + halves
    radius = halves.max(axis=-1)
    excluded = np.zeros(len(centers), dtype=bool)
    if clause.guard is not None:
        slack = clause.guard_slack(centers)
        excluded = slack - clause.guard_lipschitz(lo, hi) * radius > 0.0
    live = ~excluded
    margin = np.full(len(centers), -np.inf)
    if live.any():
        margin[live] = clause.residual(centers[live], quad_order) + clause.lipschitz_bound(lo[live], hi[live]) * radius[live]
    evaluations = int(live.sum())
    failing = live & (margin > 0.0)

    found: List[Tuple[Tuple[float, ...], float]] = []
    inconclusive = np.zeros(len(centers), dtype=bool)
    if failing.any():
        rng = np.random.default_rng(list(seed_key))
        probes = _probe_points(centers[failing], halves[failing], rng, random_points)
        flat = probes.reshape(-1, probes.shape[-1])
        values = clause.residual(flat, quad_order).reshape(probes.shape[:2])
        valid = clause.applies(flat).reshape(probes.shape[:2]) & (values > 0.0)
        evaluations += flat.shape[0]
        hit = valid.any(axis=1)
        first = np.argmax(valid, axis=1)
        for row in np.flatnonzero(hit):
            point = probes[row, first[row]]
            found.append((tuple(float(v) for v in point), float(values[row, first[row]])))
        idx = np.flatnonzero(failing)
        inconclusive[idx[~hit]] = True

    return _ChunkResult(
        checked=int(live.sum()),
        skipped=int(excluded.sum()),
        worst_margin=float(margin[live].max()) if live.any() else -np.inf,
        evaluations=evaluations,
        counterexamples=found,
        inconclusive=CellGrid(centers[inconclusive], halves[inconclusive]),
    )


def _run_chunks(clause: ResidualClause, grid: CellGrid, quad_order: int, seed_prefix: Tuple[int, ...],
                settings: Settings) -> List[_ChunkResult]:
    size = max(1, settings.chunk_size)
    jobs = [(clause, grid.centers[s:s + size], grid.half_widths[s:s + size], quad_order,
             seed_prefix + (k,), settings.violation_random_points)
            for k, s in enumerate(range(0, len(grid), size))]
    if settings.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(_check_chunk, *zip(*jobs)))
    return [_check_chunk(*job) for job in jobs]


def _merge(report: ClauseReport, results: List[_ChunkResult], dim: int) -> None:
    for res in results:
        report.cells_checked += res.checked
        report.cells_skipped_by_guard += res.skipped
        report.evaluations += res.evaluations
        report.worst_margin = max(report.worst_margin, res.worst_margin)
        report.counterexamples.extend(Counterexample(report.label, p, r) for p, r in res.counterexamples)
    report.counterexamples.sort(key=lambda c: (-c.residual, c.point))
    report.inconclusive = CellGrid.concat([res.inconclusive for res in results], dim)
    report.cells_inconclusive = len(report.inconclusive)
    if report.counterexamples:
        report.status = VIOLATED
    elif report.cells_inconclusive:
        report.status = INCONCLUSIVE
    else:
        report.status = CERTIFIED


def _overall(reports: List[ClauseReport]) -> str:
    statuses = {r.status for r in reports}
    if VIOLATED in statuses:
        return VIOLATED
    if INCONCLUSIVE in statuses:
        return INCONCLUSIVE
    return CERTIFIED


def verify(instance: ConditionInstance, r: float = None, quad_order: int = None,
           settings: Settings = None, seed: int = None) -> VerificationVerdict:
    settings = settings or get_settings()
    r = settings.resolution if r is None else r
    quad_order = settings.quad_order if quad_order is None else quad_order
    seed = settings.seed if seed is None else seed
    if not r > 0:
        raise ContractViolation(f"resolution must be positive, got {r}")

    started = time.perf_counter()
    clause_list = clauses(instance)
    grids = []
    for clause in clause_list:
        grid = None if clause.is_vacuous() else region_grid(clause.domain, r, tol=0.0, max_cells=settings.max_grid_cells)
        grids.append(grid)
    planned = sum(len(g) for g in grids if g is not None)
    if planned > settings.max_residual_evaluations:
        raise ResourceLimitError(f"verification at r={r} needs {planned} residual evaluations",
                                 requested=planned, limit=settings.max_residual_evaluations)

    reports = []
    for index, (clause, grid) in enumerate(zip(clause_list, grids)):
        report = ClauseReport(clause.label, clause.describe(), VACUOUS)
        if grid is not None:
            _merge(report, _run_chunks(clause, grid, quad_order, (seed, index, 0), settings), instance.problem.dim)
        reports.append(report)
        logger.debug(f"  {clause.label}: {report.status}, {report.cells_checked} cells, "
                     f"worst margin {report.worst_margin:.3g}, {len(report.counterexamples)} counterexamples")

    verdict = VerificationVerdict(
        status=_overall(reports),
        condition=instance.describe(),
        resolution=r,
        quad_order=quad_order,
        clauses=reports,
        evaluations=sum(rep.evaluations for rep in reports),
        seed=seed,
        elapsed=time.perf_counter() - started,
    )
    logger.info(f"Verified {verdict.condition} at r={r}: {verdict.status} "
                f"({verdict.evaluations} residual evaluations, {verdict.elapsed:.2f}s)")
    return verdict


def refine(verdict: VerificationVerdict, instance: ConditionInstance, r_next: float,
           settings: Settings = None) -> VerificationVerdict:
    """Re-check only the inconclusive cells of `verdict`, split to side r_next"""
    settings = settings or get_settings()
    if verdict.status != INCONCLUSIVE:
        return verdict
    if not r_next < verdict.resolution:
        raise ContractViolation(f"refinement needs r_next < {verdict.resolution}, got {r_next}")

    started = time.perf_counter()
    clause_list = clauses(instance)
    if len(clause_list) != len(verdict.clauses):
        raise ContractViolation("verdict does not belong to this instance")
    level = int(round(np.log2(verdict.resolution / r_next) * 1000))
    reports = []
    for index, (clause, old) in enumerate(zip(clause_list, verdict.clauses)):
        if old.status != INCONCLUSIVE:
            reports.append(old)
            continue
        grid = split_cells(old.inconclusive, r_next, region=clause.domain, max_cells=settings.max_grid_cells)
        report = ClauseReport(clause.label, clause.describe(), INCONCLUSIVE,
                              cells_checked=old.cells_checked - old.cells_inconclusive,
                              cells_skipped_by_guard=old.cells_skipped_by_guard,
                              evaluations=old.evaluations)
        _merge(report, _run_chunks(clause, grid, verdict.quad_order, (verdict.seed, index, 1 + level), settings),
               instance.problem.dim)
        reports.append(report)

    refined = VerificationVerdict(
        status=_overall(reports),
        condition=verdict.condition,
        resolution=r_next,
        quad_order=verdict.quad_order,
        clauses=reports,
        evaluations=sum(rep.evaluations for rep in reports),
        seed=verdict.seed,
        elapsed=verdict.elapsed + time.perf_counter() - started,
    )
    logger.info(f"Refined {refined.condition} to r={r_next}: {refined.status}")
    return refined


def verify_adaptive(instance: ConditionInstance, schedule, quad_order: int = None,
                    settings: Settings = None, seed: int = None) -> VerificationVerdict:
    """Verify at the first resolution, then refine inconclusive cells down the schedule"""
    schedule = sorted(schedule, reverse=True)
    verdict = verify(instance, schedule[0], quad_order, settings, seed)
    for r_next in schedule[1:]:
        if verdict.status != INCONCLUSIVE:
            break
        verdict = refine(verdict, instance, r_next, settings)
    return verdict


@dataclass
class AuditResult:
    label: str
    checked: int
    violations: int
    worst_residual: float


def audit(instance: ConditionInstance, points_per_clause: int, seed: int = 0, quad_order: int = None,
          settings: Settings = None, batch: int = 100_000) -> List[AuditResult]:
    """Random audit: sample each clause domain and count exact positive residuals"""
    settings = settings or get_settings()
    quad_order = settings.quad_order if quad_order is None else quad_order
    results = []
    for index, clause in enumerate(clauses(instance)):
        rng = np.random.default_rng([seed, index, 99])
        checked = violations = 0
        worst = -np.inf
        if not clause.is_vacuous():
            for start in range(0, points_per_clause, batch):
                pts = clause.domain.sample(rng, min(batch, points_per_clause - start))
                pts = pts[clause.applies(pts)] if len(pts) else pts
                if not len(pts):
                    continue
                values = clause.residual(pts, quad_order)
                checked += len(pts)
                violations += int((values > 0.0).sum())
                worst = max(worst, float(values.max()))
        results.append(AuditResult(clause.label, checked, violations, worst))
    return results
