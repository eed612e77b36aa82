"""Shared fixtures: small synthetic populations, fast configs and fake Adult files."""

from pathlib import Path

import numpy as np
import pytest
import scipy.special

from core.adult_loader import ADULT_CATEGORIES, ADULT_COLUMNS, AdultConfig
from core.blackbox import TrainConfig
from core.data_generator import objective_spec, sample_population
from core.lime_explainer import ExplainerConfig

COUNTRIES = ("United-States",) * 8 + ("Mexico", "Canada")


@pytest.fixture
def obj1_spec():
    return objective_spec("sample_size", n=4000, seed=7)


@pytest.fixture
def obj1_population(obj1_spec):
    return sample_population(obj1_spec)


@pytest.fixture
def fast_train():
    return TrainConfig(epochs=40, learning_rate=1e-2)


@pytest.fixture
def small_explainer():
    return ExplainerConfig(n_samples=300, seed=11)


def _adult_line(rng: np.random.Generator) -> list:
    male = rng.random() < 0.6
    hours = int(rng.integers(10, 81))
    age = int(rng.integers(18, 80))
    logit = -1.0 + 0.05 * (hours - 40) + 0.8 * male + 0.06 * male * (hours - 40) + 0.02 * (age - 40)
    income = ">50K" if rng.random() < scipy.special.expit(logit) else "<=50K"
    return [
        age,
        rng.choice(ADULT_CATEGORIES["workclass"][:3]),
        int(rng.integers(20000, 400000)),
        "Bachelors",
        int(rng.integers(1, 17)),
        rng.choice(ADULT_CATEGORIES["marital-status"][:3]),
        rng.choice(ADULT_CATEGORIES["occupation"][:5]),
        "Husband" if male else rng.choice(("Wife", "Unmarried", "Not-in-family")),
        rng.choice(ADULT_CATEGORIES["race"]),
        "Male" if male else "Female",
        int(rng.choice((0, 0, 0, 5000))),
        0,
        hours,
        rng.choice(COUNTRIES),
        income,
    ]


def write_adult_files(directory: Path, n_train: int = 600, n_test: int = 300, seed: int = 0,
                      missing: int = 3) -> Path:
    """
    Write UCI-format ``adult.data``/``adult.test`` files.

    The first ``missing`` training rows get a ``?`` workclass; the test file
    has the UCI header line and labels with a trailing period.
    """
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    with open(directory / "adult.data", "w") as f:
        for k in range(n_train):
            fields = _adult_line(rng)
            if k < missing:
                fields[1] = "?"
            f.write(", ".join(str(v) for v in fields) + "\n")
    with open(directory / "adult.test", "w") as f:
        f.write("|1x3 Cross validator\n")
        for _ in range(n_test):
            fields = _adult_line(rng)
            fields[-1] = fields[-1] + "."
            f.write(", ".join(str(v) for v in fields) + "\n")
    assert len(ADULT_COLUMNS) == 15
    return directory


@pytest.fixture
def adult_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("ADULT_DATA_DIR", raising=False)
    return write_adult_files(tmp_path / "adult")


@pytest.fixture
def adult_config(adult_dir):
    return AdultConfig.from_dir(adult_dir)
