import pytest
from click.testing import CliRunner

from app import create_app
from app.config import Settings
from app.core.system import ReachAvoidProblem
from app.utils.data_loader import data_loader


def box(lower, upper):
    return {'kind': 'box', 'lower': list(lower), 'upper': list(upper)}


def make_problem(dynamics, init, safe, target, working_box, support=None, kind='uniform_box',
                 invariant=None, threshold=0.5, name='toy'):
    dim = len(dynamics)
    support = support or [[-1.0, 1.0]] * dim
    regions = {'init': init, 'safe': safe, 'target': target, 'working_box': working_box}
    if invariant is not None:
        regions['invariant'] = invariant
    return ReachAvoidProblem.from_dict({
        'name': name,
        'system': {'dim': dim, 'dynamics': list(dynamics)},
        'disturbance': {'kind': kind, 'support': support, 'params': {}},
        'regions': regions,
        'threshold': threshold,
    })


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def ex3():
    return data_loader.load_problem('ex3')


@pytest.fixture
def walk1d():
    return data_loader.load_problem('walk1d')


@pytest.fixture
def hit_problem():
    """Every trajectory from [0, 0.1] lands in the target after one step"""
    return make_problem(['x1 + 0.5 + 0.01*θ1'], box([0.0], [0.1]), box([-1.0], [2.0]), box([0.4], [2.0]),
                        box([-2.0], [3.0]), name='hit')


@pytest.fixture
def escape_problem():
    """Every trajectory leaves the safe set after one step"""
    return make_problem(['x1 - 2 + 0.01*θ1'], box([0.0], [0.1]), box([-1.0], [2.0]), box([0.4], [2.0]),
                        box([-4.0], [3.0]), name='escape')


@pytest.fixture
def sticky_problem():
    """Trajectories never move, so they neither reach the target nor leave"""
    return make_problem(['x1 + 0*θ1'], box([0.0], [0.1]), box([-1.0], [2.0]), box([0.4], [2.0]),
                        box([-2.0], [3.0]), name='sticky')


@pytest.fixture
def flat_problem():
    """Working box equals the safe set, so clauses outside it are vacuous"""
    return make_problem(['2*x1 + 0.01*θ1', 'x2 + 0.01*θ2'], box([-0.1, -0.1], [0.1, 0.1]),
                        box([-1.0, -1.0], [1.0, 1.0]), box([0.5, -0.1], [0.6, 0.1]),
                        box([-1.0, -1.0], [1.0, 1.0]), name='flat')


@pytest.fixture
def app():
    app = create_app()
    app.config['TESTING'] = True
    return app


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner():
    return CliRunner()
