"""
Configuration settings and management for the explanation disparity audit.
"""

import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv

from core.adult_loader import AdultConfig
from core.blackbox import DEFAULT_HIDDEN_DIMS, TrainConfig
from core.data_generator import DataGenSpec, Objective, objective_spec
from core.lime_explainer import ExplainerConfig
from utils.errors import ConfigurationError

DEFAULT_CONFIG_PATH = "config/config.yaml"
SECTIONS = ("data", "training", "explainer", "harness", "adult", "logging")


def parse_param(text: str) -> Tuple[List[str], Any]:
    """
    Split a ``section.key=value`` override.

    The value is parsed as a YAML scalar, so ``20`` is an int, ``1e-3`` a
    float, ``null`` None and ``[a, b]`` a list.
    """
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigurationError("param", f"expected key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigurationError(key, f"unparseable value {raw!r}: {e}")
    return key.split("."), value


class Config:
    """Configuration manager for audit runs."""

    def __init__(self, config_path: Optional[Union[str, Path]] = DEFAULT_CONFIG_PATH,
                 overrides: Iterable[str] = ()):
        """
        Initialize configuration from a YAML file.

        Args:
            config_path: YAML file; None starts from built-in defaults only
            overrides: ``section.key=value`` strings applied after loading
        """
        self.config_path = Path(config_path) if config_path else None

        # Load environment variables from .env file
        env_file = Path(".env")
        if env_file.exists():
            load_dotenv(env_file)

        self._config = self._load_config() if self.config_path else {}
        self.apply_overrides(overrides)

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file with environment variable expansion."""
        try:
            with open(self.config_path, "r") as file:
                content = file.read()

            # Expand environment variables
            content = os.path.expandvars(content)

            config = yaml.safe_load(content) or {}
        except FileNotFoundError:
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")
        except yaml.YAMLError as e:
            raise ValueError(f"Invalid YAML configuration: {e}")
        if not isinstance(config, dict):
            raise ValueError(f"Invalid YAML configuration: top level of {self.config_path} is not a mapping")
        unknown = set(config) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(sorted(unknown)[0], f"unknown config section (known: {', '.join(SECTIONS)})")
        return config

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        """Apply dotted ``--param`` overrides in order; later ones win."""
        for text in overrides:
            keys, value = parse_param(text)
            if len(keys) < 2 or keys[0] not in SECTIONS:
                raise ConfigurationError(".".join(keys), f"expected <section>.<key> with section in {SECTIONS}")
            node = self._config
            for key in keys[:-1]:
                node = node.setdefault(key, {})
                if not isinstance(node, dict):
                    raise ConfigurationError(".".join(keys), f"{key} is not a section")
            node[keys[-1]] = value

    def set(self, section: str, key: str, value: Any) -> None:
        """Set one value unless it is None (used for CLI flags)."""
        if value is not None:
            self._config.setdefault(section, {})[key] = value

    @property
    def data(self) -> Dict[str, Any]:
        """Get synthetic data configuration."""
        return self._config.get("data") or {}

    @property
    def training(self) -> Dict[str, Any]:
        """Get black-box training configuration."""
        return self._config.get("training") or {}

    @property
    def explainer(self) -> Dict[str, Any]:
        return self._config.get("explainer") or {}

    @property
    def harness(self) -> Dict[str, Any]:
        return self._config.get("harness") or {}

    @property
    def adult(self) -> Dict[str, Any]:
        return self._config.get("adult") or {}

    @property
    def logging(self) -> Dict[str, Any]:
        return self._config.get("logging") or {}

    def get_population_size(self) -> int:
        return int(self.data.get("n", 20000))

    def get_train_fraction(self) -> float:
        return float(self.data.get("train_fraction", 0.7))

    def get_data_spec(self, objective: Union[str, Objective], **overrides) -> DataGenSpec:
        """
        Objective defaults, then any DataGenSpec field named in ``data``,
        then ``overrides``.
        """
        known = {f.name for f in fields(DataGenSpec)} - {"objective"}
        params = {k: v for k, v in self.data.items() if k in known}
        params["n"] = self.get_population_size()
        params.update(overrides)
        return objective_spec(objective, **params)

    def get_train_config(self) -> TrainConfig:
        """Get optimizer settings (Adam, 100 epochs, lr 1e-3, weight decay 1e-4 by default)."""
        t = self.training
        return TrainConfig(
            epochs=int(t.get("epochs", 100)),
            learning_rate=float(t.get("learning_rate", 1e-3)),
            weight_decay=float(t.get("weight_decay", 1e-4)),
            adam_betas=tuple(t.get("adam_betas", (0.9, 0.999))),
            adam_eps=float(t.get("adam_eps", 1e-8)),
            batch_size=t.get("batch_size"),
        )

    def get_hidden_dims(self) -> Tuple[int, ...]:
        return tuple(int(h) for h in self.training.get("hidden_dims", DEFAULT_HIDDEN_DIMS))

    def get_explainer_config(self) -> ExplainerConfig:
        e = self.explainer
        width = e.get("kernel_width")
        return ExplainerConfig(
            n_samples=int(e.get("n_samples", 1000)),
            kernel_width=None if width in (None, "auto") else float(width),
            ridge_lambda=float(e.get("ridge_lambda", 1.0)),
            categorical_columns=frozenset(e.get("categorical_columns") or ()),
            regress_on=str(e.get("regress_on", "probability")),
            workers=int(e.get("workers", 1)),
        )

    def get_adult_config(self, data_dir: Optional[Union[str, Path]] = None) -> AdultConfig:
        """Adult settings; ``data_dir`` (CLI) beats ``adult.data_dir``, ADULT_DATA_DIR beats both."""
        a = self.adult
        kwargs: Dict[str, Any] = dict(
            drop_missing=bool(a.get("drop_missing", True)),
            sensitive_column=str(a.get("sensitive_column", "sex")),
            disadvantaged_value=str(a.get("disadvantaged_value", "Male")),
        )
        if a.get("excluded_columns") is not None:
            kwargs["excluded_columns"] = frozenset(a["excluded_columns"])
        return AdultConfig.from_dir(data_dir or a.get("data_dir"), **kwargs)

    def get_proportion_sweep(self) -> str:
        return str(self.adult.get("proportion_sweep", "disadvantaged_share"))

    def get_include_gender_omissions(self) -> bool:
        return bool(self.adult.get("include_gender_omissions", False))

    def get_trials(self) -> int:
        return int(self.harness.get("trials", 5))

    def get_base_seed(self) -> int:
        return int(self.harness.get("base_seed", 0))

    def get_max_explained_per_group(self) -> Optional[int]:
        """Per-group explanation cap; ``all`` or null explains the whole test split."""
        cap = self.harness.get("max_explained_per_group", 500)
        return None if cap in (None, "all") else int(cap)

    def get_workers(self) -> int:
        return int(self.harness.get("workers", 1))

    def get_ci_method(self) -> str:
        return str(self.harness.get("ci_method", "t"))

    def get_bootstrap_resamples(self) -> int:
        return int(self.harness.get("bootstrap_resamples", 1000))

    def get_q_kinds(self) -> Tuple[str, ...]:
        return tuple(self.harness.get("q_kinds", ("accuracy", "residual_error")))

    def get_output_dir(self) -> Path:
        return Path(self.harness.get("output_dir", "results"))

    def get_plan_overrides(self) -> Dict[str, Any]:
        """ExperimentPlan keyword arguments shared by synthetic and Adult plans."""
        return dict(
            trials=self.get_trials(),
            base_seed=self.get_base_seed(),
            train_config=self.get_train_config(),
            explainer=self.get_explainer_config(),
            max_explained_per_group=self.get_max_explained_per_group(),
            train_fraction=self.get_train_fraction(),
            q_kinds=self.get_q_kinds(),
            hidden_dims=self.get_hidden_dims(),
            ci_method=self.get_ci_method(),
            bootstrap_resamples=self.get_bootstrap_resamples(),
        )

    def get_log_level(self) -> str:
        """Get the logging level (XDAUDIT_LOG_LEVEL wins over the file)."""
        return os.getenv("XDAUDIT_LOG_LEVEL") or str(self.logging.get("level", "INFO"))

    def get_log_file(self) -> Optional[Path]:
        path = self.logging.get("file")
        return Path(path) if path else None
