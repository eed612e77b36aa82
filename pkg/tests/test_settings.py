from pathlib import Path

import pytest

from config.settings import Config, parse_param
from core.data_generator import Objective
from utils.errors import ConfigurationError

REPO_CONFIG = Path(__file__).resolve().parents[1] / "config" / "config.yaml"


@pytest.fixture
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("XDAUDIT_LOG_LEVEL", raising=False)
    monkeypatch.delenv("ADULT_DATA_DIR", raising=False)
    return tmp_path


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_builtin_defaults(isolated):
    config = Config(None)
    assert config.get_population_size() == 20000
    assert config.get_train_fraction() == 0.7
    train = config.get_train_config()
    assert (train.epochs, train.learning_rate, train.weight_decay) == (100, 1e-3, 1e-4)
    assert config.get_hidden_dims() == (50, 100, 200)
    explainer = config.get_explainer_config()
    assert explainer.n_samples == 1000 and explainer.kernel_width is None and explainer.ridge_lambda == 1.0
    assert config.get_trials() == 5
    assert config.get_max_explained_per_group() == 500
    assert config.get_q_kinds() == ("accuracy", "residual_error")
    assert config.get_output_dir() == Path("results")
    assert config.get_log_level() == "INFO"
    assert config.get_log_file() is None


def test_shipped_config_matches_defaults(isolated):
    config = Config(REPO_CONFIG)
    assert config.get_population_size() == 20000
    assert config.get_train_config().epochs == 100
    assert config.get_explainer_config().kernel_width is None
    assert config.get_data_spec("concept_shift").beta == -0.5


def test_yaml_values_and_env_expansion(isolated, monkeypatch):
    monkeypatch.setenv("AUDIT_TRIALS", "3")
    path = _write(isolated / "c.yaml", "harness:\n  trials: ${AUDIT_TRIALS}\n  max_explained_per_group: all\n"
                                       "explainer:\n  kernel_width: 0.5\n")
    config = Config(path)
    assert config.get_trials() == 3
    assert config.get_max_explained_per_group() is None
    assert config.get_explainer_config().kernel_width == 0.5


def test_dotenv_file_is_loaded(isolated, monkeypatch):
    monkeypatch.delenv("AUDIT_SEED", raising=False)
    _write(isolated / ".env", "AUDIT_SEED=42\n")
    path = _write(isolated / "c.yaml", "harness:\n  base_seed: ${AUDIT_SEED}\n")
    assert Config(path).get_base_seed() == 42
    monkeypatch.delenv("AUDIT_SEED", raising=False)


def test_missing_file(isolated):
    with pytest.raises(FileNotFoundError):
        Config(isolated / "absent.yaml")


def test_invalid_yaml(isolated):
    with pytest.raises(ValueError, match="Invalid YAML"):
        Config(_write(isolated / "bad.yaml", "harness: [unclosed\n"))
    with pytest.raises(ValueError, match="Invalid YAML"):
        Config(_write(isolated / "list.yaml", "- 1\n- 2\n"))


def test_unknown_section(isolated):
    with pytest.raises(ConfigurationError) as info:
        Config(_write(isolated / "c.yaml", "rpc:\n  url: x\n"))
    assert info.value.field == "rpc"


def test_param_parsing():
    assert parse_param("training.epochs=20") == (["training", "epochs"], 20)
    assert parse_param("training.learning_rate=1.0e-2") == (["training", "learning_rate"], 0.01)
    assert parse_param("harness.q_kinds=[accuracy]") == (["harness", "q_kinds"], ["accuracy"])
    assert parse_param("harness.max_explained_per_group=") == (["harness", "max_explained_per_group"], None)
    with pytest.raises(ConfigurationError):
        parse_param("training.epochs")


def test_overrides_win_over_file(isolated):
    path = _write(isolated / "c.yaml", "training:\n  epochs: 50\n")
    config = Config(path, overrides=["training.epochs=7", "data.n=3000", "data.coef_L_on_A=0.5"])
    assert config.get_train_config().epochs == 7
    spec = config.get_data_spec(Objective.SAMPLE_SIZE, seed=4)
    assert (spec.n, spec.coef_L_on_A, spec.seed) == (3000, 0.5, 4)
    with pytest.raises(ConfigurationError):
        config.apply_overrides(["epochs=3"])
    with pytest.raises(ConfigurationError):
        config.apply_overrides(["network.rpc=3"])


def test_set_ignores_unset_flags(isolated):
    config = Config(None)
    config.set("harness", "trials", None)
    config.set("harness", "workers", 4)
    assert config.get_trials() == 5
    assert config.get_workers() == 4


def test_env_log_level_wins(isolated, monkeypatch):
    config = Config(_write(isolated / "c.yaml", "logging:\n  level: WARNING\n  file: logs/x.log\n"))
    assert config.get_log_level() == "WARNING"
    monkeypatch.setenv("XDAUDIT_LOG_LEVEL", "DEBUG")
    assert config.get_log_level() == "DEBUG"
    assert config.get_log_file() == Path("logs/x.log")


def test_adult_settings(isolated):
    config = Config(None, overrides=["adult.data_dir=/data/uci", "adult.excluded_columns=[fnlwgt]"])
    adult = config.get_adult_config()
    assert adult.data_paths[0] == Path("/data/uci/adult.data")
    assert adult.excluded_columns == frozenset({"fnlwgt"})
    assert config.get_adult_config("/other").data_paths[1] == Path("/other/adult.test")
    assert config.get_proportion_sweep() == "disadvantaged_share"
    assert config.get_include_gender_omissions() is False


def test_plan_overrides_build_a_plan(isolated):
    from core.experiment_runner import objective_defaults

    config = Config(None, overrides=["harness.trials=2", "training.hidden_dims=[8, 4]"])
    plan = objective_defaults(1, data_spec=config.get_data_spec(1), **config.get_plan_overrides())
    assert plan.trials == 2
    assert plan.hidden_dims == (8, 4)
