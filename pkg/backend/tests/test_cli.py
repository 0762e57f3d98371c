import json

import pytest

from app.cli import EXIT_INVALID_INPUT, EXIT_PARAMETER_DOMAIN, cli

ZERO_H = {'kind': 'polynomial', 'dim': 2, 'degree': 0, 'basis': [[0, 0]], 'parameters': [0.0]}
ONE_V = {'kind': 'polynomial', 'dim': 2, 'degree': 0, 'basis': [[0, 0]], 'parameters': [1.0]}


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def bc4_condition(tmp_path):
    def make(p):
        return write(tmp_path / f"bc4_{p}.json",
                     {'condition_id': 'BC4', 'scalars': {'lambda': 0.99, 'p': p}, 'certificates': {'h': ZERO_H}})
    return make


def test_problems(runner):
    result = runner.invoke(cli, ['problems'])
    assert result.exit_code == 0
    assert 'ex3' in result.output and 'walk1d' in result.output


def test_verify_exit_codes(runner, bc4_condition, tmp_path):
    violated = runner.invoke(cli, ['verify', 'ex3', bc4_condition(0.5), '--resolution', '0.1'])
    assert violated.exit_code == 1
    assert 'Violated' in violated.output
    out = tmp_path / 'report'
    certified = runner.invoke(cli, ['verify', 'ex3', bc4_condition(0.0), '--resolution', '0.1', '--out', str(out)])
    assert certified.exit_code == 0
    assert (out / 'verdict.json').exists()


def test_certificate_override(runner, bc4_condition, tmp_path):
    # h = 1 meets the init clause at p = 0.5 but not the outside-safe clause
    h = write(tmp_path / 'one.json', ONE_V)
    result = runner.invoke(cli, ['verify', 'ex3', bc4_condition(0.5), '--resolution', '0.1', '--cert', f"h={h}"])
    assert result.exit_code == 1
    assert 'Violated' in result.output


def test_invalid_input_exits_64(runner, tmp_path, bc4_condition):
    assert runner.invoke(cli, ['verify', 'ex3', str(tmp_path / 'missing.json')]).exit_code == EXIT_INVALID_INPUT
    assert runner.invoke(cli, ['verify', 'ex9', bc4_condition(0.5)]).exit_code == EXIT_INVALID_INPUT
    assert runner.invoke(cli, ['synthesize', 'ex3', 'BC9']).exit_code == EXIT_INVALID_INPUT
    assert runner.invoke(cli, ['no-such-command']).exit_code == EXIT_INVALID_INPUT
    broken = tmp_path / 'broken.json'
    broken.write_text('{')
    assert runner.invoke(cli, ['verify', 'ex3', str(broken)]).exit_code == EXIT_INVALID_INPUT


def test_synthesize_trivial_certificate(runner, tmp_path):
    config = write(tmp_path / 'cegis.json', {'max_iterations': 1, 'restarts': 1, 'initial_samples': 50,
                                             'learner_steps': 20, 'loss_margin': 0.0})
    out = tmp_path / 'synth'
    result = runner.invoke(cli, ['synthesize', 'ex3', 'BC4', '--template', 'const:0', '--p', '0',
                                 '--scalar', 'lambda=0.99', '--resolution', '0.1', '--config', config,
                                 '--out', str(out)])
    assert result.exit_code == 0, result.output
    assert 'Feasible' in result.output
    assert (out / 'condition.json').exists()
    assert (out / 'telemetry.jsonl').exists()
    assert json.loads((out / 'synthesis.json').read_text())['status'] == 'Feasible'


def test_convert(runner, tmp_path):
    cond = write(tmp_path / 'aras.json',
                 {'condition_id': 'BC2', 'problem': 'ex3', 'scalars': {'eps': 0.1, 'p': 0.5},
                  'certificates': {'V': ONE_V}})
    out = tmp_path / 'converted'
    result = runner.invoke(cli, ['convert', 'aras-to-bc4restricted', cond, '--out', str(out)])
    assert result.exit_code == 0
    assert 'aras-to-bc4restricted -> BC4_RESTRICTED' in result.output
    assert 'lambda = 0.952380952381' in result.output
    with open(out / 'condition.json') as f:
        assert json.load(f)['problem'] == 'ex3'


def test_convert_outside_parameter_domain(runner, tmp_path):
    cond = write(tmp_path / 'aras.json',
                 {'condition_id': 'BC2', 'scalars': {'eps': 0.1, 'p': 1.0}, 'certificates': {'V': ONE_V}})
    result = runner.invoke(cli, ['convert', 'aras-to-bc4restricted', cond])
    assert result.exit_code == EXIT_PARAMETER_DOMAIN


def test_estimate(runner):
    result = runner.invoke(cli, ['estimate', 'ex3', '--x0', '0.125,0', '--samples', '200', '--horizon', '50'])
    assert result.exit_code == 0
    assert 'minimum lower bound' in result.output
