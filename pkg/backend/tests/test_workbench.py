import json
import os

import numpy as np
import pandas as pd
import pytest

from app.core.cegis import CegisConfig
from app.core.certificates import Polynomial
from app.core.conditions import ConditionId, ConditionInstance
from app.core.errors import ParameterDomainError, ValidationError
from app.core.workbench import FEASIBLE, Workbench, fill_scalars, init_points
from app.utils.data_loader import SUITE_COLUMNS

FAST = CegisConfig(max_iterations=1, restarts=1, initial_samples=50, learner_steps=20, loss_margin=0.0,
                   resolution_schedule=(0.1,), quad_order=8)


@pytest.fixture
def bench():
    return Workbench()


def test_fill_scalars(settings):
    assert fill_scalars(ConditionId.BC3, 0.5, settings=settings)['lambda_prime'] == pytest.approx(2.0)
    assert fill_scalars(ConditionId.BC1, 0.6, settings=settings) == {'p': 0.6, 'eps': settings.slack}
    bc4 = fill_scalars(ConditionId.BC4, 0.6, lambdas=[0.999, 0.99], settings=settings)
    assert bc4 == {'p': 0.6, 'lambda': 0.99}
    assert fill_scalars(ConditionId.BC4, 0.6, {'lambda': 0.5}, [0.99], settings)['lambda'] == 0.5


def test_init_points_lie_in_init(ex3):
    points = init_points(ex3, 5)
    assert len(points) > 0
    assert ex3.init.contains(points).all()
    with pytest.raises(ValidationError):
        init_points(ex3, 0)


def test_convert_writes_a_condition(bench, tmp_path):
    V = Polynomial.constant(2, 1.0)
    result = bench.convert('ARAS_to_BC4restricted', {'V': V}, {'eps': 0.1, 'p': 0.5}, str(tmp_path), 'ex3')
    assert result.target == ConditionId.BC4_RESTRICTED
    assert result.scalars['lambda'] == pytest.approx(1.0 / 1.05)
    with open(tmp_path / 'condition.json') as f:
        doc = json.load(f)
    assert doc['condition_id'] == 'BC4_RESTRICTED'
    assert doc['problem'] == 'ex3'
    assert doc['certificates'] == {'h': os.path.join('certificates', 'h.json')}
    assert (tmp_path / 'certificates' / 'h.json').exists()


def test_convert_errors(bench):
    V = Polynomial.constant(2, 1.0)
    with pytest.raises(ValidationError) as err:
        bench.convert('nope', {'V': V}, {})
    assert err.value.field == 'conversion'
    with pytest.raises(ParameterDomainError):
        bench.convert('aras-to-bc4restricted', {'V': V}, {'eps': 0.1, 'p': 1.0})
    with pytest.raises(ValidationError) as err:
        bench.convert('aras-to-bc4restricted', {'V': V}, {'p': 0.5})
    assert err.value.field == 'scalars.eps'


def test_aras_lambda_comes_from_p(bench):
    result = bench.convert('aras-to-mras', {'V': Polynomial.constant(2, 1.0)}, {'eps': 0.1, 'p': 0.5})
    assert result.scalars == pytest.approx({'gamma': 0.95, 'delta': 0.1, 'lambda_prime': 2.0})


def test_select_cells(bench):
    suite = bench.loader.load_suite()
    chosen = bench.select_cells(['ex3/BC4'], suite)
    assert len(chosen) > 0
    assert set(chosen['example']) == {'ex3'} and set(chosen['condition']) == {'BC4'}
    assert bench.select_cells([], suite).empty
    assert len(bench.select_cells(['all'], suite)) == len(suite)
    assert set(bench.select_cells(['ex3/bc4/net:4x4'], suite)['template']) == {'net:4x4'}


def test_estimate_needs_exactly_one_of_x0_and_grid(bench, ex3, settings):
    with pytest.raises(ValidationError):
        bench.estimate(ex3, x0=[0.125, 0.0], grid=3, settings=settings)
    with pytest.raises(ValidationError):
        bench.estimate(ex3, settings=settings)


def test_estimate_with_sandwich(bench, hit_problem, settings, tmp_path):
    instance = ConditionInstance(ConditionId.BC4, hit_problem, {'h': Polynomial.constant(1, 0.0)},
                                 {'lambda': 0.99, 'p': 0.0})
    report = bench.estimate(hit_problem, x0=[0.05], n=200, horizon=10, instance=instance, out_dir=str(tmp_path),
                            settings=settings)
    assert report.estimates[0].p_hat == 1.0
    assert report.sandwich_ok is True
    assert (tmp_path / 'estimate.json').exists()
    assert list(pd.read_csv(tmp_path / 'estimate.csv')['sandwich']) == [True]


def test_synthesize_trivial_certificate(bench, ex3, settings, tmp_path):
    instance = bench.build_instance(ex3, 'BC4', 'const:0', {'lambda': 0.99, 'p': 0.0})
    outcome = bench.synthesize(instance, FAST, out_dir=str(tmp_path), settings=settings)
    assert outcome.status == FEASIBLE
    assert outcome.exit_code == 0
    assert outcome.confirmation.resolution == pytest.approx(0.05)
    for name in ('telemetry.jsonl', 'condition.json', 'synthesis.json', 'verdict.json',
                 os.path.join('certificates', 'h.json')):
        assert (tmp_path / name).exists()
    with open(tmp_path / 'synthesis.json') as f:
        assert json.load(f)['status'] == FEASIBLE


def test_bench_turns_failures_into_rows(bench, settings, tmp_path):
    cell = {'condition': 'BC4', 'template': 'const:0', 'p': 0.0, 'scalars': {'lambda': 0.99}, 'lambdas': [],
            'expected': 'feasible', 'source': 'cegis'}
    suite = pd.DataFrame([{**cell, 'example': 'ex3'}, {**cell, 'example': 'nope'}], columns=SUITE_COLUMNS)
    frame = bench.bench(['all'], str(tmp_path), workers=1, config=FAST, settings=settings, suite=suite)
    assert list(frame['example']) == ['ex3', 'nope']
    assert frame.loc[0, 'status'] == FEASIBLE
    assert frame.loc[1, 'status'].startswith('Error: ValidationError')
    assert json.loads(frame.loc[0, 'scalars']) == {'lambda': 0.99, 'p': 0.0}
    assert (tmp_path / 'bench.csv').exists()
