import pytest

from app.config import Settings, load_settings


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for name in ('RAW_QUAD_ORDER', 'RAW_RESOLUTION_SCHEDULE', 'RAW_SLACK', 'RAW_MC_ALPHA'):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_defaults(clean_env):
    settings = load_settings()
    assert settings == Settings()
    assert (settings.quad_order, settings.max_iterations, settings.slack) == (8, 10, 1e-6)
    assert settings.resolution_schedule == (0.02, 0.01, 0.005)


def test_environment_overrides(clean_env):
    clean_env.setenv('RAW_QUAD_ORDER', '12')
    clean_env.setenv('RAW_RESOLUTION_SCHEDULE', '0.02,0.01')
    clean_env.setenv('RAW_SLACK', '1e-4')
    settings = load_settings()
    assert settings.quad_order == 12
    assert settings.resolution_schedule == (0.02, 0.01)
    assert settings.slack == 1e-4


def test_invalid_values_are_ignored(clean_env):
    clean_env.setenv('RAW_QUAD_ORDER', 'many')
    assert load_settings().quad_order == 8


def test_env_file(clean_env, tmp_path):
    env_file = tmp_path / 'bench.env'
    env_file.write_text('RAW_MC_ALPHA=0.01\n')
    assert load_settings(str(env_file)).mc_alpha == 0.01


def test_replace_keeps_other_fields():
    settings = Settings().replace(workers=4)
    assert settings.workers == 4
    assert settings.resolution == Settings().resolution
