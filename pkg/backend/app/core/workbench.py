"""
Batch orchestration behind the command line and the REST surface.

verify       grid-verify a condition instance and write the verdict reports
synthesize   CEGIS (optionally sweeping lambda), then an independent
             verification at half the finest schedule resolution
estimate     Monte Carlo reach-avoid estimates at one x0 or on a grid over X0
convert      constructive conversions between conditions
bench        the feasibility matrix over the benchmark suite
"""
import json
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.config import Settings, get_settings
from app.core.cegis import CegisConfig, CegisResult, lambda_sweep, run_cegis
from app.core.certificates import Certificate, build_template
from app.core.conditions import (CertifiedBound, ConditionId, ConditionInstance, certified_bound, pointwise_bound,
                                 required_roles, required_scalars)
from app.core.conversions import (aras_to_bc4restricted, aras_to_mras, bc1_to_as, bc5_transform, mras_to_aras,
                                  mras_to_bc4restricted)
from app.core.errors import ParameterDomainError, ValidationError
from app.core.oracle import ProbabilityEstimate, estimate_reach_avoid, sandwich_holds
from app.core.system import ReachAvoidProblem
from app.core.verifier import CERTIFIED, VerificationVerdict, verify, verify_adaptive
from app.utils.data_loader import data_loader, parse_templates
from app.utils import reports

logger = logging.getLogger(__name__)

FEASIBLE = 'Feasible'
FAILED = 'Failed'
UNCONFIRMED = 'Unconfirmed'
ERROR = 'Error'


@dataclass
class SynthesisOutcome:
    status: str
    instance: ConditionInstance
    cegis: CegisResult
    confirmation: Optional[VerificationVerdict] = None
    chosen_lambda: Optional[float] = None
    attempts: List = field(default_factory=list)
    paths: Dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.status == FEASIBLE:
            return 0
        if self.status == UNCONFIRMED and self.confirmation is not None:
            return self.confirmation.exit_code
        return 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'status': self.status,
            'condition': self.instance.describe(),
            'lambda': self.chosen_lambda,
            'lambda_attempts': [{'lambda': lam, 'status': status} for lam, status in self.attempts],
            'iterations': len(self.cegis.telemetry),
            'cegis_verdict': None if self.cegis.verdict is None else self.cegis.verdict.status,
            'confirmation': None if self.confirmation is None else self.confirmation.to_dict(),
        }


@dataclass
class EstimateReport:
    estimates: List[ProbabilityEstimate]
    bound: Optional[CertifiedBound] = None

    @property
    def min_lower(self) -> float:
        return min(e.lo for e in self.estimates)

    @property
    def sandwich_ok(self) -> Optional[bool]:
        if self.bound is None:
            return None
        return all(sandwich_holds(self.bound, e) for e in self.estimates)

    def frame(self) -> pd.DataFrame:
        return reports.estimates_frame(self.estimates, self.bound)

    def to_dict(self) -> Dict[str, Any]:
        doc = {
            'schema_version': reports.REPORT_SCHEMA_VERSION,
            'estimates': [e.to_dict() for e in self.estimates],
            'min_lower': self.min_lower,
        }
        if self.bound is not None:
            doc['bound'] = self.bound.to_dict()
            doc['sandwich'] = self.sandwich_ok
        return doc


@dataclass
class ConversionResult:
    name: str
    target: ConditionId
    certificates: Dict[str, Certificate]
    scalars: Dict[str, float]

    def condition_doc(self, certificate_refs: Mapping[str, Any] = None, problem: str = None) -> Dict[str, Any]:
        refs = certificate_refs or {role: c.to_dict() for role, c in self.certificates.items()}
        doc = {'condition_id': self.target.value, 'scalars': dict(self.scalars), 'certificates': dict(refs)}
        if problem:
            doc['problem'] = problem
        return doc


def _need(scalars: Mapping[str, float], name: str) -> float:
    if name not in scalars:
        raise ValidationError(f"conversion needs scalar {name!r}", field=f"scalars.{name}")
    return float(scalars[name])


def _need_cert(certs: Mapping[str, Certificate], role: str) -> Certificate:
    if role not in certs:
        raise ValidationError(f"conversion needs certificate {role!r}", field=f"certificates.{role}")
    return certs[role]


def _aras_lambda(scalars: Mapping[str, float]) -> float:
    # ARAS lambda is 1/(1-p) when only p is given
    if 'lambda' in scalars and float(scalars['lambda']) > 1:
        return float(scalars['lambda'])
    p = _need(scalars, 'p')
    if not 0 <= p < 1:
        raise ParameterDomainError(f"p = {p} outside [0, 1)", bound='0 <= p < 1')
    return 1.0 / (1.0 - p)


def _convert_aras_to_mras(certs, scalars):
    gamma, delta, lam = aras_to_mras(_need(scalars, 'eps'), _aras_lambda(scalars))
    return {'V': _need_cert(certs, 'V')}, {'gamma': gamma, 'delta': delta, 'lambda_prime': lam}


def _convert_mras_to_aras(certs, scalars):
    eps, lam = mras_to_aras(_need(scalars, 'gamma'), _need(scalars, 'delta'), _need(scalars, 'lambda_prime'))
    return {'V': _need_cert(certs, 'V')}, {'eps': eps, 'p': 1.0 - 1.0 / lam}


def _convert_aras_to_bc4restricted(certs, scalars):
    p = _need(scalars, 'p')
    h, lam = aras_to_bc4restricted(_need_cert(certs, 'V'), _need(scalars, 'eps'), p)
    return {'h': h}, {'lambda': lam, 'p': p}


def _convert_mras_to_bc4restricted(certs, scalars):
    h, lam, p = mras_to_bc4restricted(_need_cert(certs, 'V'), _need(scalars, 'gamma'), _need(scalars, 'delta'),
                                      _need(scalars, 'lambda_prime'))
    return {'h': h}, {'lambda': lam, 'p': p}


def _convert_bc5(certs, scalars):
    h1, h2 = bc5_transform(_need_cert(certs, 'h1'), _need_cert(certs, 'h2'))
    return {'h1': h1, 'h2': h2}, {'p': _need(scalars, 'p')}


def _convert_bc1_to_as(certs, scalars):
    return {'v': bc1_to_as(_need_cert(certs, 'h1'))}, {'p': _need(scalars, 'p')}


# name -> (target condition, function)
CONVERSIONS = {
    'aras-to-mras': (ConditionId.BC3, _convert_aras_to_mras),
    'mras-to-aras': (ConditionId.BC2, _convert_mras_to_aras),
    'aras-to-bc4restricted': (ConditionId.BC4_RESTRICTED, _convert_aras_to_bc4restricted),
    'mras-to-bc4restricted': (ConditionId.BC4_RESTRICTED, _convert_mras_to_bc4restricted),
    'bc5-transform': (ConditionId.BC5_DUAL, _convert_bc5),
    'bc1-to-as': (ConditionId.AS, _convert_bc1_to_as),
}


def fill_scalars(condition_id: ConditionId, p: float, given: Mapping[str, float] = None,
                 lambdas: Sequence[float] = None, settings: Settings = None) -> Dict[str, float]:
    """Complete a condition's scalars from the probability level p"""
    settings = settings or get_settings()
    scalars = dict(given or {})
    names = required_scalars(condition_id)
    if 'p' in names:
        scalars.setdefault('p', p)
    if 'lambda_prime' in names:
        scalars.setdefault('lambda_prime', 1.0 / (1.0 - p))
    if 'eps' in names:
        scalars.setdefault('eps', settings.slack)
    if 'lambda' in names and 'lambda' not in scalars and lambdas:
        scalars['lambda'] = min(lambdas)
    return scalars


def init_points(problem: ReachAvoidProblem, per_axis: int, seed: int = 0) -> np.ndarray:
    """Grid points over X0's bounding box that lie in X0; random members if none do"""
    if per_axis < 1:
        raise ValidationError("grid needs at least one point per axis", field='grid')
    box = problem.init.bounding_box()
    if per_axis == 1:
        axes = [np.array([0.5 * (a + b)]) for a, b in zip(box.lo, box.hi)]
    else:
        axes = [np.linspace(a, b, per_axis) for a, b in zip(box.lo, box.hi)]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing='ij')], axis=-1)
    inside = mesh[problem.init.contains(mesh)]
    if len(inside):
        return inside
    return problem.init.sample(np.random.default_rng([seed, 3]), per_axis ** problem.dim)


def _slug(*parts) -> str:
    return re.sub(r'[^A-Za-z0-9.=-]+', '_', '_'.join(str(p) for p in parts)).strip('_')


class Workbench:
    def __init__(self, loader=data_loader):
        self.loader = loader

    def verify(self, instance: ConditionInstance, resolution: float = None, quad_order: int = None,
               seed: int = None, schedule: Sequence[float] = None, out_dir: str = None,
               settings: Settings = None) -> VerificationVerdict:
        """
        Verify an instance; with a schedule, inconclusive cells are refined
        down the listed resolutions
        """
        settings = settings or get_settings()
        try:
            if schedule:
                verdict = verify_adaptive(instance, schedule, quad_order, settings, seed)
            else:
                verdict = verify(instance, resolution, quad_order, settings, seed)
        except Exception as e:
            logger.error(f"Error verifying {instance.describe()}: {str(e)}")
            raise
        if out_dir:
            reports.write_verdict(verdict, out_dir, instance.problem.dim, settings.max_reported_counterexamples)
        return verdict

    def build_instance(self, problem: ReachAvoidProblem, condition: Union[str, ConditionId],
                       templates: Union[str, Mapping[str, str]], scalars: Mapping[str, float],
                       seed: int = 0, x0=None) -> ConditionInstance:
        cid = ConditionId.parse(condition)
        roles = list(required_roles(cid))
        specs = parse_templates(templates, roles) if isinstance(templates, str) else dict(templates)
        rng = np.random.default_rng(seed)
        certs = {role: build_template(specs[role], problem.dim, rng) for role in roles}
        return ConditionInstance(cid, problem, certs, scalars, x0)

    def synthesize(self, instance: ConditionInstance, config: CegisConfig = None, lambdas: Sequence[float] = None,
                   out_dir: str = None, settings: Settings = None) -> SynthesisOutcome:
        settings = settings or get_settings()
        config = config or CegisConfig.from_settings(settings)
        telemetry = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            telemetry = open(os.path.join(out_dir, 'telemetry.jsonl'), 'w', encoding='utf-8')
        try:
            if lambdas:
                sweep = lambda_sweep(instance, lambdas, config, settings, telemetry)
                result, chosen, attempts = sweep.result, sweep.chosen, sweep.attempts
                final = instance.with_scalars(**{'lambda': chosen if chosen is not None else max(lambdas)})
            else:
                result = run_cegis(instance, config, settings, telemetry)
                chosen, attempts, final = instance.scalars.get('lambda'), [], instance
        except Exception as e:
            logger.error(f"Error synthesizing {instance.describe()}: {str(e)}")
            raise
        finally:
            if telemetry is not None:
                telemetry.close()

        final = final.with_certificates(result.certificates)
        outcome = SynthesisOutcome(FAILED, final, result, chosen_lambda=chosen, attempts=attempts)
        if result.feasible:
            r_confirm = min(config.resolution_schedule) / 2.0
            outcome.confirmation = verify(final, r_confirm, config.quad_order, settings, config.seed + 1)
            outcome.status = FEASIBLE if outcome.confirmation.status == CERTIFIED else UNCONFIRMED
            if outcome.status == UNCONFIRMED:
                logger.warning(f"{final.describe()}: CEGIS certified, but verification at r={r_confirm} "
                               f"returned {outcome.confirmation.status}")
        logger.info(f"Synthesis of {final.describe()}: {outcome.status}")

        if out_dir:
            outcome.paths = self._write_synthesis(outcome, out_dir, settings)
        return outcome

    def _write_synthesis(self, outcome: SynthesisOutcome, out_dir: str, settings: Settings) -> Dict[str, str]:
        paths = {'telemetry': os.path.join(out_dir, 'telemetry.jsonl')}
        refs = {}
        for role, cert in outcome.instance.certificates.items():
            rel = os.path.join('certificates', f"{role}.json")
            self.loader.save_certificate(cert, os.path.join(out_dir, rel))
            refs[role] = rel
        doc = outcome.instance.to_dict(refs)
        doc['problem'] = outcome.instance.problem.name
        paths['condition'] = self.loader.save_json(doc, os.path.join(out_dir, 'condition.json'))
        paths['summary'] = self.loader.save_json(outcome.to_dict(), os.path.join(out_dir, 'synthesis.json'))
        verdict = outcome.confirmation or outcome.cegis.verdict
        if verdict is not None:
            paths.update(reports.write_verdict(verdict, out_dir, outcome.instance.problem.dim,
                                               settings.max_reported_counterexamples))
        return paths

    def estimate(self, problem: ReachAvoidProblem, x0=None, grid: int = None, n: int = None, horizon: int = None,
                 alpha: float = None, seed: int = None, instance: ConditionInstance = None,
                 out_dir: str = None, settings: Settings = None) -> EstimateReport:
        """Reach-avoid estimates at x0, or on a grid over X0; an instance adds the sandwich check"""
        settings = settings or get_settings()
        seed = settings.seed if seed is None else seed
        if (x0 is None) == (grid is None):
            raise ValidationError("give exactly one of x0 and grid", field='x0')
        points = [np.asarray(x0, dtype=float)] if x0 is not None else list(init_points(problem, grid, seed))
        estimates = [estimate_reach_avoid(problem, p, n, horizon, alpha, seed, settings) for p in points]
        bound = None
        if instance is not None:
            bound = pointwise_bound(instance, points[0]) if len(points) == 1 else certified_bound(instance)
        report = EstimateReport(estimates, bound)
        if report.sandwich_ok is False:
            logger.error(f"Certified {bound} is inconsistent with the Monte Carlo interval on {problem.name}")
        if out_dir:
            self.loader.save_json(report.to_dict(), os.path.join(out_dir, 'estimate.json'))
            reports.write_csv(report.frame(), os.path.join(out_dir, 'estimate.csv'))
        return report

    def convert(self, name: str, certificates: Mapping[str, Certificate], scalars: Mapping[str, float],
                out_dir: str = None, problem: str = None) -> ConversionResult:
        key = name.strip().lower().replace('_', '-')
        if key not in CONVERSIONS:
            raise ValidationError(f"unknown conversion {name!r}; expected one of {sorted(CONVERSIONS)}",
                                  field='conversion')
        target, fn = CONVERSIONS[key]
        certs, derived = fn(certificates, scalars)
        result = ConversionResult(key, target, certs, derived)
        logger.info(f"Converted with {key}: {', '.join(f'{k}={v:.12g}' for k, v in derived.items())}")
        if out_dir:
            refs = {}
            for role, cert in certs.items():
                rel = os.path.join('certificates', f"{role}.json")
                self.loader.save_certificate(cert, os.path.join(out_dir, rel))
                refs[role] = rel
            self.loader.save_json(result.condition_doc(refs, problem), os.path.join(out_dir, 'condition.json'))
        return result

    def select_cells(self, selectors: Sequence[str], suite: pd.DataFrame = None) -> pd.DataFrame:
        """
        Pick suite cells. A selector is 'all' or example[/condition[/template]];
        no selectors picks nothing.
        """
        suite = self.loader.load_suite() if suite is None else suite
        if not selectors:
            return suite.iloc[0:0]
        mask = pd.Series(False, index=suite.index)
        for selector in selectors:
            if selector.strip().lower() == 'all':
                return suite
            parts = selector.strip().split('/', 2)
            part_mask = suite['example'] == parts[0]
            if len(parts) > 1:
                part_mask &= suite['condition'] == ConditionId.parse(parts[1]).value
            if len(parts) > 2:
                part_mask &= suite['template'] == parts[2]
            mask |= part_mask
        return suite[mask]

    def bench(self, selectors: Sequence[str], out_dir: str = None, workers: int = None, seed: int = None,
              config: CegisConfig = None, settings: Settings = None, suite: pd.DataFrame = None) -> pd.DataFrame:
        settings = settings or get_settings()
        seed = settings.seed if seed is None else seed
        workers = settings.workers if workers is None else workers
        config = config or CegisConfig.from_settings(settings)
        cells = self.select_cells(selectors, suite).to_dict('records')
        logger.info(f"Bench: {len(cells)} cells with {workers} workers")

        cell_dirs = [os.path.join(out_dir, 'cells', _slug(c['example'], c['condition'], c['template'], c['p']))
                     if out_dir else None for c in cells]
        jobs = [(cell, config.to_dict(), seed, settings, cell_dir) for cell, cell_dir in zip(cells, cell_dirs)]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(run_bench_cell, *zip(*jobs)))
        else:
            rows = [run_bench_cell(*job) for job in jobs]

        frame = reports.bench_frame(rows)
        if out_dir:
            reports.write_csv(frame, os.path.join(out_dir, 'bench.csv'))
        agree = sum((r['status'] == FEASIBLE) == (r['expected'] == 'feasible') for r in rows)
        logger.info(f"Bench finished: {agree}/{len(rows)} cells match the expected feasibility")
        return frame


def run_bench_cell(cell: Mapping[str, Any], config_doc: Mapping[str, Any], seed: int, settings: Settings,
                   out_dir: Optional[str] = None) -> Dict[str, Any]:
    """One bench cell; failures become rows instead of aborting the matrix"""
    started = time.perf_counter()
    row = {key: cell[key] for key in ('example', 'condition', 'template', 'p', 'expected')}
    row['seed'] = seed
    scalars = dict(cell.get('scalars') or {})
    try:
        cid = ConditionId.parse(cell['condition'])
        problem = data_loader.load_problem(cell['example']).with_threshold(max(float(cell['p']), 1e-12))
        lambdas = list(cell.get('lambdas') or [])
        scalars = fill_scalars(cid, float(cell['p']), scalars, lambdas, settings)
        config = CegisConfig.from_dict({**config_doc, 'seed': seed}, settings)
        instance = workbench.build_instance(problem, cid, cell['template'], scalars, seed)
        outcome = workbench.synthesize(instance, config, lambdas or None, out_dir, settings)
        row['status'] = outcome.status
        scalars = dict(outcome.instance.scalars)
    except Exception as e:
        logger.error(f"Bench cell {cell['example']}/{cell['condition']}/{cell['template']}/p={cell['p']} "
                     f"failed: {str(e)}")
        row['status'] = f"{ERROR}: {type(e).__name__}: {e}"
    row['scalars'] = json.dumps(scalars, sort_keys=True)
    row['wall_time'] = round(time.perf_counter() - started, 3)
    return row


# Global instance
workbench = Workbench()
