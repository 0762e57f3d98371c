"""
Tabular reports: verdict summaries, counterexamples, probability estimates
and the bench feasibility matrix. Every CSV carries a fixed header.
"""
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.oracle import ProbabilityEstimate, sandwich_holds
from app.core.verifier import VerificationVerdict

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

VERDICT_COLUMNS = ['clause', 'status', 'worst_margin', 'cells_checked', 'cells_skipped_by_guard',
                   'cells_inconclusive', 'evaluations', 'counterexamples', 'description']

ESTIMATE_COLUMNS = ['x0', 'p_hat', 'lo', 'hi', 'undecided', 'N', 'K', 'alpha', 'seed']

BENCH_COLUMNS = ['example', 'condition', 'template', 'p', 'scalars', 'status', 'wall_time', 'seed', 'expected']


def verdict_frame(verdict: VerificationVerdict) -> pd.DataFrame:
    rows = [{
        'clause': c.label,
        'status': c.status,
        'worst_margin': c.worst_margin if np.isfinite(c.worst_margin) else np.nan,
        'cells_checked': c.cells_checked,
        'cells_skipped_by_guard': c.cells_skipped_by_guard,
        'cells_inconclusive': c.cells_inconclusive,
        'evaluations': c.evaluations,
        'counterexamples': len(c.counterexamples),
        'description': c.description,
    } for c in verdict.clauses]
    return pd.DataFrame(rows, columns=VERDICT_COLUMNS)


def counterexample_frame(verdict: VerificationVerdict, dim: int, limit: Optional[int] = None) -> pd.DataFrame:
    columns = ['clause'] + [f"x{i + 1}" for i in range(dim)] + ['residual']
    rows = []
    for report in verdict.clauses:
        for cex in report.counterexamples[:limit]:
            rows.append([cex.clause, *cex.point, cex.residual])
    return pd.DataFrame(rows, columns=columns)


def estimates_frame(estimates: Sequence[ProbabilityEstimate], bound=None) -> pd.DataFrame:
    frame = pd.DataFrame([{
        'x0': ','.join(f"{v:g}" for v in e.x0),
        'p_hat': e.p_hat,
        'lo': e.lo,
        'hi': e.hi,
        'undecided': e.undecided,
        'N': e.n,
        'K': e.horizon,
        'alpha': e.alpha,
        'seed': e.seed,
    } for e in estimates], columns=ESTIMATE_COLUMNS)
    if bound is not None:
        frame['bound'] = bound.value
        frame['sandwich'] = [sandwich_holds(bound, e) for e in estimates]
    return frame


def bench_frame(rows: Iterable[Dict[str, Any]]) -> pd.DataFrame:
    """Bench rows in canonical order, whatever order the cells finished in"""
    frame = pd.DataFrame(list(rows), columns=BENCH_COLUMNS)
    if frame.empty:
        return frame
    frame['scalars'] = frame['scalars'].map(lambda s: s if isinstance(s, str) else json.dumps(s, sort_keys=True))
    return frame.sort_values(['example', 'condition', 'template', 'p']).reset_index(drop=True)


def write_csv(frame: pd.DataFrame, path: str) -> str:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def write_verdict(verdict: VerificationVerdict, out_dir: str, dim: int, max_reported: int = 50) -> Dict[str, str]:
    """verdict.json, verdict.csv and counterexamples.csv under out_dir"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        'json': os.path.join(out_dir, 'verdict.json'),
        'table': os.path.join(out_dir, 'verdict.csv'),
        'counterexamples': os.path.join(out_dir, 'counterexamples.csv'),
    }
    with open(paths['json'], 'w', encoding='utf-8') as f:
        json.dump(verdict.to_dict(max_reported), f, indent=2, ensure_ascii=False)
        f.write('\n')
    write_csv(verdict_frame(verdict), paths['table'])
    write_csv(counterexample_frame(verdict, dim, max_reported), paths['counterexamples'])
    return paths


def format_table(frame: pd.DataFrame, float_format: str = '{:.4g}') -> str:
    if frame.empty:
        return '(no rows)'
    return frame.to_string(index=False, float_format=float_format.format)


def format_verdict(verdict: VerificationVerdict) -> str:
    lines = [f"{verdict.condition}: {verdict.status} at r={verdict.resolution:g}, "
             f"q={verdict.quad_order} ({verdict.evaluations} evaluations, {verdict.elapsed:.2f}s)"]
    lines.append(format_table(verdict_frame(verdict).drop(columns=['description'])))
    cexs: List = verdict.counterexamples
    if cexs:
        worst = max(cexs, key=lambda c: c.residual)
        lines.append(f"worst counterexample: {worst.clause} at {list(worst.point)} (residual {worst.residual:.4g})")
    return '\n'.join(lines)
