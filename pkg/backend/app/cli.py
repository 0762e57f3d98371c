"""
Batch command line.

    python workbench.py verify ex3 condition.json --resolution 0.01
    python workbench.py synthesize ex3 BC4 --template net:8x8 --p 0.6 --lambda 0.99 --lambda 0.999
    python workbench.py estimate ex3 --x0 0.125,0 --samples 100000
    python workbench.py convert aras-to-bc4restricted condition.json --out converted/
    python workbench.py bench ex3 ex4/BC4 --out bench/ --workers 4

Exit codes: verify 0/1/2 for Certified/Violated/Inconclusive; synthesize 0
only when the certificates survive the finer confirmation run; 64 for
invalid input, 65 for a conversion outside its parameter domain, 3 when a
resource cap would be exceeded.
"""
import functools
import json
import logging
import sys
from typing import Dict, Tuple

import click

from app.config import get_settings
from app.core.cegis import CegisConfig
from app.core.conditions import ConditionId
from app.core.errors import ParameterDomainError, ResourceLimitError, ValidationError, WorkbenchError
from app.core.workbench import fill_scalars, workbench
from app.utils import reports
from app.utils.data_loader import data_loader, parse_point

logger = logging.getLogger(__name__)

EXIT_INVALID_INPUT = 64
EXIT_PARAMETER_DOMAIN = 65
EXIT_RESOURCE_LIMIT = 3

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def handle_errors(fn):
    """Map workbench errors to exit codes after logging them"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ResourceLimitError as e:
            logger.error(str(e))
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_RESOURCE_LIMIT)
        except ParameterDomainError as e:
            logger.error(str(e))
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_PARAMETER_DOMAIN if fn.__name__ == 'convert' else EXIT_INVALID_INPUT)
        except (WorkbenchError, json.JSONDecodeError) as e:
            logger.error(str(e))
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_INVALID_INPUT)
    return wrapper


def _pairs(values: Tuple[str, ...], option: str) -> Dict[str, str]:
    pairs = {}
    for value in values:
        key, sep, rest = value.partition('=')
        if not sep or not key.strip():
            raise ValidationError(f"expected NAME=VALUE, got {value!r}", field=option)
        pairs[key.strip()] = rest.strip()
    return pairs


def _scalars(values: Tuple[str, ...]) -> Dict[str, float]:
    scalars = {}
    for key, text in _pairs(values, 'scalar').items():
        try:
            scalars[key] = float(text)
        except ValueError:
            raise ValidationError(f"{text!r} is not a number", field=f"scalars.{key}")
    return scalars


def _schedule(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated resolutions, got {text!r}", field='schedule')


class WorkbenchGroup(click.Group):
    """Usage errors exit with the invalid-input code; 2 is reserved for Inconclusive"""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = EXIT_INVALID_INPUT
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_INVALID_INPUT
            raise


@click.group(cls=WorkbenchGroup)
@click.option('--log-level', default='INFO', show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
@click.pass_context
def cli(ctx, log_level):
    """Reach-avoid barrier certificate workbench"""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj.setdefault('settings', get_settings())


@cli.command()
@click.argument('problem')
@click.argument('condition', type=click.Path(exists=True, dir_okay=False))
@click.option('--cert', 'certs', multiple=True, metavar='ROLE=PATH', help='Certificate file overriding the condition')
@click.option('--resolution', type=float, help='Grid cell side')
@click.option('--schedule', help='Comma-separated resolutions; inconclusive cells are refined down the list')
@click.option('--quad-order', type=int)
@click.option('--seed', type=int)
@click.option('--workers', type=int)
@click.option('--out', type=click.Path(file_okay=False), help='Directory for verdict.json and the CSV reports')
@click.pass_context
@handle_errors
def verify(ctx, problem, condition, certs, resolution, schedule, quad_order, seed, workers, out):
    """Grid-verify the certificates of CONDITION on PROBLEM (file or benchmark name)"""
    settings = ctx.obj['settings']
    if workers:
        settings = settings.replace(workers=workers)
    overrides = {role: data_loader.load_certificate(path, f"certificates.{role}")
                 for role, path in _pairs(certs, 'cert').items()}
    instance = data_loader.load_condition(condition, data_loader.load_problem(problem), overrides)
    verdict = workbench.verify(instance, resolution, quad_order, seed, _schedule(schedule) if schedule else None,
                               out, settings)
    click.echo(reports.format_verdict(verdict))
    sys.exit(verdict.exit_code)


@cli.command()
@click.argument('problem')
@click.argument('condition_id')
@click.option('--template', default='net:8x8', show_default=True,
              help="Template for every role ('net:8x8', 'poly:4') or per role ('h1=net:4x4,h2=net:8x8')")
@click.option('--p', 'p', type=float, help='Probability level; fills p and lambda_prime')
@click.option('--scalar', 'scalar_values', multiple=True, metavar='NAME=VALUE')
@click.option('--lambda', 'lambdas', type=float, multiple=True, help='Lambda values to sweep in ascending order')
@click.option('--x0', help='Initial state for BC4_SINGLETON, comma-separated')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='CEGIS config JSON')
@click.option('--resolution', type=float, help='Single verifier resolution instead of the config schedule')
@click.option('--quad-order', type=int)
@click.option('--seed', type=int)
@click.option('--workers', type=int)
@click.option('--out', type=click.Path(file_okay=False), help='Directory for certificates, telemetry and verdict')
@click.pass_context
@handle_errors
def synthesize(ctx, problem, condition_id, template, p, scalar_values, lambdas, x0, config_path, resolution,
               quad_order, seed, workers, out):
    """Train certificates for CONDITION_ID on PROBLEM with CEGIS"""
    settings = ctx.obj['settings']
    if workers:
        settings = settings.replace(workers=workers)
    config = data_loader.load_cegis_config(config_path, settings)
    changes = {}
    if seed is not None:
        changes['seed'] = seed
    if quad_order is not None:
        changes['quad_order'] = quad_order
    if resolution is not None:
        changes['resolution_schedule'] = (resolution,)
    if changes:
        config = CegisConfig.from_dict({**config.to_dict(), **changes}, settings)

    cid = ConditionId.parse(condition_id)
    prob = data_loader.load_problem(problem)
    level = prob.threshold if p is None else p
    scalars = fill_scalars(cid, level, _scalars(scalar_values), lambdas, settings)
    point = parse_point(x0, prob.dim) if x0 else None
    instance = workbench.build_instance(prob, cid, template, scalars, config.seed, point)
    outcome = workbench.synthesize(instance, config, list(lambdas) or None, out, settings)
    click.echo(f"{outcome.instance.describe()}: {outcome.status}")
    if outcome.chosen_lambda is not None:
        click.echo(f"lambda = {outcome.chosen_lambda:g}")
    if outcome.confirmation is not None:
        click.echo(reports.format_verdict(outcome.confirmation))
    sys.exit(outcome.exit_code)


@cli.command()
@click.argument('problem')
@click.option('--x0', help='Initial state, comma-separated')
@click.option('--grid', type=int, help='Points per axis over the initial set')
@click.option('--samples', type=int, help='Number of trajectories N')
@click.option('--horizon', type=int, help='Truncation horizon K')
@click.option('--alpha', type=float, help='Confidence level parameter')
@click.option('--seed', type=int)
@click.option('--condition', type=click.Path(exists=True, dir_okay=False),
              help='Condition whose certified bound is checked against the interval')
@click.option('--out', type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def estimate(ctx, problem, x0, grid, samples, horizon, alpha, seed, condition, out):
    """Monte Carlo reach-avoid estimate with a Clopper-Pearson interval"""
    settings = ctx.obj['settings']
    prob = data_loader.load_problem(problem)
    point = parse_point(x0, prob.dim) if x0 else None
    instance = data_loader.load_condition(condition, prob) if condition else None
    report = workbench.estimate(prob, point, grid, samples, horizon, alpha, seed, instance, out, settings)
    click.echo(reports.format_table(report.frame()))
    click.echo(f"minimum lower bound: {report.min_lower:.6g}")
    if report.sandwich_ok is not None:
        click.echo(f"{report.bound}: {'consistent' if report.sandwich_ok else 'INCONSISTENT'}")
        sys.exit(0 if report.sandwich_ok else 1)


@cli.command()
@click.argument('name')
@click.argument('condition', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(file_okay=False), help='Directory for the converted condition')
@handle_errors
def convert(name, condition, out):
    """Apply conversion NAME to the certificates and scalars of CONDITION"""
    doc, certs, _ = data_loader.load_condition_parts(condition)
    result = workbench.convert(name, certs, doc['scalars'], out, doc.get('problem'))
    click.echo(f"{result.name} -> {result.target.value}")
    for key, value in result.scalars.items():
        click.echo(f"{key} = {value:.12g}")


@cli.command()
@click.argument('selectors', nargs=-1)
@click.option('--out', type=click.Path(file_okay=False), help='Directory for bench.csv and per-cell outputs')
@click.option('--suite', 'suite_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='CEGIS config JSON')
@click.option('--seed', type=int)
@click.option('--workers', type=int)
@click.pass_context
@handle_errors
def bench(ctx, selectors, out, suite_path, config_path, seed, workers):
    """Run the feasibility matrix for SELECTORS ('all', 'ex3', 'ex3/BC4', 'ex3/BC4/net:8x8')"""
    settings = ctx.obj['settings']
    suite = data_loader.load_suite(suite_path) if suite_path else None
    config = data_loader.load_cegis_config(config_path, settings)
    frame = workbench.bench(list(selectors), out, workers, seed, config, settings, suite)
    if out is None:
        click.echo(frame.to_csv(index=False), nl=False)
    else:
        click.echo(reports.format_table(frame))


@cli.command()
@click.option('--check', is_flag=True, help='Also run the sampling checks on each problem')
@handle_errors
def problems(check):
    """List the shipped benchmark problems"""
    frame = data_loader.list_problems()
    if check:
        settings = get_settings()
        for name in frame['name']:
            data_loader.load_problem(name, check=True, settings=settings)
        frame['golden'] = [data_loader.check_golden(name) for name in frame['name']]
    click.echo(reports.format_table(frame))


def main():
    cli(obj={})
