"""
UCI Adult census income ingestion, encoding and experimental restrictions.

The raw ``adult.data`` / ``adult.test`` files are user supplied. Rows are
encoded into a TabularDataset whose sensitive attribute is ``sex`` with
0 = Male (disadvantaged) and 1 = Female. ``hours-per-week`` stays a
continuous column and ``native-country`` becomes a one-hot block.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.special
import scipy.stats

from core.data_generator import BINARY, CONTINUOUS, Column, TabularDataset, proportion_counts
from utils.errors import ConfigurationError, DataIntegrityError, FitError, SamplingError, SchemaError
from utils.seeding import derive_rng
from utils.validators import DataValidator, check_fraction

logger = logging.getLogger(__name__)

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)
EXPECTED_ROWS = 48842
MISSING_MARKER = "?"
DEFAULT_EXCLUDED = frozenset({"fnlwgt", "education"})

CONTINUOUS_COLUMNS = ("age", "education-num", "capital-gain", "capital-loss", "hours-per-week")
ADULT_CATEGORIES: Dict[str, Tuple[str, ...]] = {
    "workclass": ("Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
                  "State-gov", "Without-pay", "Never-worked"),
    "marital-status": ("Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
                       "Married-spouse-absent", "Married-AF-spouse"),
    "occupation": ("Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
                   "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
                   "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
                   "Armed-Forces"),
    "relationship": ("Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"),
    "race": ("White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"),
    "sex": ("Female", "Male"),
    "native-country": ("United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany",
                       "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece", "South", "China",
                       "Cuba", "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica",
                       "Vietnam", "Mexico", "Portugal", "Ireland", "France", "Dominican-Republic",
                       "Laos", "Ecuador", "Taiwan", "Haiti", "Columbia", "Hungary", "Guatemala",
                       "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
                       "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands"),
}


@dataclass(frozen=True)
class AdultConfig:
    """Where the Adult files live and how to encode them."""
    data_paths: Tuple[Path, Path]
    drop_missing: bool = True
    excluded_columns: FrozenSet[str] = DEFAULT_EXCLUDED
    sensitive_column: str = "sex"
    disadvantaged_value: str = "Male"
    label_positive: str = ">50K"

    def __post_init__(self):
        object.__setattr__(self, "data_paths", tuple(Path(p) for p in self.data_paths))
        object.__setattr__(self, "excluded_columns", frozenset(self.excluded_columns))
        if len(self.data_paths) != 2:
            raise ConfigurationError("data_paths", "expected (train, test) paths")
        unknown = self.excluded_columns - set(ADULT_COLUMNS)
        if unknown:
            raise ConfigurationError("excluded_columns", f"unknown Adult columns {sorted(unknown)}")
        if "income" in self.excluded_columns:
            raise ConfigurationError("excluded_columns", "the income label cannot be excluded")
        if self.disadvantaged_value not in ADULT_CATEGORIES.get(self.sensitive_column, (self.disadvantaged_value,)):
            raise ConfigurationError("disadvantaged_value",
                                     f"{self.disadvantaged_value!r} is not a {self.sensitive_column} category")

    @classmethod
    def from_dir(cls, data_dir: Union[str, Path, None] = None, **kwargs) -> "AdultConfig":
        """Config for ``adult.data``/``adult.test`` in a directory (``ADULT_DATA_DIR`` wins)."""
        base = Path(os.environ.get("ADULT_DATA_DIR") or data_dir or "data/adult")
        return cls(data_paths=(base / "adult.data", base / "adult.test"), **kwargs)


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    """
    Encoded Adult rows plus everything needed to invert the encoding.

    ``encoding`` maps each raw categorical column to its encoded column
    names; ``scaler`` maps each continuous column to its (mean, sd).
    """
    dataset: TabularDataset
    encoding: Dict[str, Tuple[str, ...]]
    scaler: Dict[str, Tuple[float, float]]
    sensitive_column: str = "sex"
    disadvantaged_value: str = "Male"
    source: Optional[np.ndarray] = None

    @property
    def blocks(self) -> Tuple[Tuple[str, ...], ...]:
        """One-hot blocks (multi-column encodings) for joint resampling."""
        return tuple(cols for cols in self.encoding.values() if len(cols) > 1)

    def columns_for(self, raw_column: str) -> Tuple[str, ...]:
        if raw_column in self.encoding:
            return self.encoding[raw_column]
        if raw_column in self.scaler:
            return (raw_column,)
        raise SchemaError(f"column {raw_column!r} is not part of the encoding")

    def standardize(self, column: str, value: float) -> float:
        if column not in self.scaler:
            raise SchemaError(f"{column!r} is not a standardized column")
        mean, sd = self.scaler[column]
        return (value - mean) / sd


def _level_of(name: str) -> str:
    return name.split("=", 1)[1]


def _parse_line(error: Exception) -> Optional[int]:
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else None


def _read_split(path: Path, skip_header: bool, source: str) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(f"Adult data file not found: {path}")
    try:
        frame = pd.read_csv(
            path, names=list(ADULT_COLUMNS), header=None, skiprows=1 if skip_header else 0,
            skipinitialspace=True, na_values=[MISSING_MARKER], keep_default_na=False,
            dtype=str, index_col=False,
        )
    except pd.errors.ParserError as e:
        raise DataIntegrityError(f"{path}: wrong field count ({e})", _parse_line(e))
    first_line = 2 if skip_header else 1
    frame["line"] = np.arange(len(frame)) + first_line
    frame["source"] = source

    labels = frame["income"]
    unlabeled = labels.isna() | (labels.str.len() == 0)
    if unlabeled.any():
        line = int(frame.loc[unlabeled, "line"].iloc[0])
        raise DataIntegrityError(f"{path}: row has fewer than {len(ADULT_COLUMNS)} fields", line)
    frame["income"] = labels.str.strip().str.rstrip(".")
    return frame


def load_raw(cfg: AdultConfig) -> pd.DataFrame:
    """
    Parse both Adult files into one frame of raw string records.

    The test file's header line is skipped and its labels lose their
    trailing period. Missing values (``?``) become NaN. A total other
    than 48842 rows is logged as a warning.

    Raises:
        FileNotFoundError: A data file is missing
        DataIntegrityError: Malformed row, with its line number
    """
    train_path, test_path = cfg.data_paths
    frame = pd.concat([_read_split(train_path, False, "train"), _read_split(test_path, True, "test")],
                      ignore_index=True)
    if len(frame) != EXPECTED_ROWS:
        logger.warning(f"Adult files hold {len(frame)} rows, expected {EXPECTED_ROWS}")
    bad_labels = ~frame["income"].isin(["<=50K", ">50K"])
    if bad_labels.any():
        row = frame.loc[bad_labels].iloc[0]
        raise DataIntegrityError(f"{row['source']} file: unknown income label {row['income']!r}", int(row["line"]))
    logger.info(f"Loaded {len(frame)} Adult records from {train_path.parent}")
    return frame


def preprocess(records: pd.DataFrame, cfg: AdultConfig,
               fit_mask: Optional[np.ndarray] = None) -> EncodedDataset:
    """
    Encode raw records.

    Continuous columns are standardized with statistics from the rows
    selected by ``fit_mask`` (all rows by default); categorical columns
    become one-hot blocks over their fixed category lists; the sensitive
    column becomes a single 0/1 column.

    Raises:
        SchemaError: A category outside the known levels
        DataIntegrityError: Missing values while ``drop_missing`` is off
    """
    validator = DataValidator()
    validator.require_columns(list(records.columns), ADULT_COLUMNS, "Adult preprocessing")
    frame = records
    missing_rows = frame[list(ADULT_COLUMNS)].isna().any(axis=1).to_numpy()
    if missing_rows.any():
        if not cfg.drop_missing:
            line = int(frame.loc[missing_rows, "line"].iloc[0]) if "line" in frame else None
            raise DataIntegrityError("missing values present and drop_missing is off", line)
        logger.info(f"Dropping {int(missing_rows.sum())} Adult rows with missing values")
        if fit_mask is not None:
            fit_mask = np.asarray(fit_mask)[~missing_rows]
        frame = frame.loc[~missing_rows]
    frame = frame.reset_index(drop=True)
    fit_mask = np.ones(len(frame), dtype=bool) if fit_mask is None else np.asarray(fit_mask, dtype=bool)

    names: List[Column] = []
    blocks: List[np.ndarray] = []
    encoding: Dict[str, Tuple[str, ...]] = {}
    scaler: Dict[str, Tuple[float, float]] = {}

    for col in CONTINUOUS_COLUMNS:
        if col in cfg.excluded_columns:
            continue
        values = frame[col].astype(float).to_numpy()
        mean = float(values[fit_mask].mean())
        sd = float(values[fit_mask].std())
        sd = sd if sd > 0 else 1.0
        scaler[col] = (mean, sd)
        names.append(Column(col, CONTINUOUS))
        blocks.append(((values - mean) / sd)[:, None])

    for col, levels in ADULT_CATEGORIES.items():
        unknown = sorted(set(frame[col].unique()) - set(levels))
        if unknown:
            raise SchemaError(f"unknown {col} categories {unknown}")
        if col in cfg.excluded_columns:
            continue
        if col == cfg.sensitive_column:
            encoding[col] = (col,)
            names.append(Column(col, BINARY))
            blocks.append((frame[col] != cfg.disadvantaged_value).to_numpy(dtype=float)[:, None])
            continue
        codes = pd.Categorical(frame[col], categories=list(levels)).codes
        one_hot = np.zeros((len(frame), len(levels)))
        one_hot[np.arange(len(frame)), codes] = 1.0
        encoded = tuple(f"{col}={level}" for level in levels)
        encoding[col] = encoded
        names.extend(Column(name, BINARY) for name in encoded)
        blocks.append(one_hot)

    sensitive = (frame[cfg.sensitive_column] != cfg.disadvantaged_value).to_numpy(dtype=np.int64)
    labels = (frame["income"] == cfg.label_positive).to_numpy(dtype=np.int64)
    dataset = TabularDataset(
        columns=tuple(names),
        X=np.hstack(blocks),
        y=labels,
        sensitive=sensitive,
        provenance="adult",
    )
    logger.info(f"Encoded {dataset.n_rows} Adult rows into {len(names)} columns "
                f"({int(np.sum(sensitive == 0))} {cfg.disadvantaged_value})")
    return EncodedDataset(dataset, encoding, scaler, cfg.sensitive_column, cfg.disadvantaged_value,
                          frame["source"].to_numpy() if "source" in frame else None)


def decode_row(enc: EncodedDataset, row: Union[int, np.ndarray]) -> Dict[str, Any]:
    """Invert the encoding of one row back to raw values."""
    ds = enc.dataset
    vector = ds.X[row] if isinstance(row, (int, np.integer)) else np.asarray(row, dtype=float)
    position = {name: j for j, name in enumerate(ds.names)}
    decoded: Dict[str, Any] = {}
    for col, (mean, sd) in enc.scaler.items():
        decoded[col] = float(vector[position[col]] * sd + mean)
    for col, encoded in enc.encoding.items():
        if col == enc.sensitive_column:
            other = [v for v in ADULT_CATEGORIES[col] if v != enc.disadvantaged_value]
            decoded[col] = enc.disadvantaged_value if vector[position[col]] == 0 else other[0]
            continue
        values = vector[[position[c] for c in encoded]]
        if not np.isclose(values.sum(), 1.0):
            raise SchemaError(f"one-hot block {col} does not sum to 1")
        decoded[col] = _level_of(encoded[int(np.argmax(values))])
    return decoded


class ConceptShiftResult(NamedTuple):
    coefficients: np.ndarray
    std_errors: np.ndarray
    p_value: float
    iterations: int


def concept_shift_test(data: Union[TabularDataset, pd.DataFrame], covariate: str = "hours-per-week",
                       sensitive_column: str = "sex", label_column: str = "income",
                       max_iter: int = 100, tol: float = 1e-8) -> ConceptShiftResult:
    """
    Test whether the group changes the covariate's effect on the outcome.

    Fits ``logit P(Y=1) = b0 + b1*s + b2*x + b3*s*x`` by Newton-Raphson
    and returns the two-sided Wald p-value for ``b3``. For a TabularDataset
    the group indicator is its sensitive vector; for a frame it is the
    ``sensitive_column`` (already 0/1) and the label is ``label_column``.

    Raises:
        FitError: No convergence within ``max_iter`` iterations
    """
    if isinstance(data, TabularDataset):
        s = data.sensitive.astype(float)
        x = data.column(covariate).astype(float)
        y = data.y.astype(float)
    else:
        DataValidator().require_columns(list(data.columns), (sensitive_column, covariate, label_column),
                                        "concept-shift test")
        s = data[sensitive_column].to_numpy(dtype=float)
        x = data[covariate].to_numpy(dtype=float)
        y = data[label_column].to_numpy(dtype=float)

    design = np.column_stack([np.ones_like(x), s, x, s * x])
    beta = np.zeros(design.shape[1])
    grad_norm = float("inf")
    for iteration in range(1, max_iter + 1):
        p = scipy.special.expit(design @ beta)
        grad = design.T @ (y - p)
        hessian = design.T @ (design * (p * (1.0 - p))[:, None])
        step = scipy.linalg.solve(hessian, grad, assume_a="pos")
        beta = beta + step
        grad_norm = float(np.linalg.norm(grad))
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise FitError(f"Newton-Raphson did not converge in {max_iter} iterations", grad_norm)

    p = scipy.special.expit(design @ beta)
    hessian = design.T @ (design * (p * (1.0 - p))[:, None])
    std_errors = np.sqrt(np.diag(scipy.linalg.inv(hessian)))
    z = beta[3] / std_errors[3]
    p_value = float(2.0 * scipy.stats.norm.sf(abs(z)))
    logger.info(f"Interaction test on {covariate}: b3={beta[3]:.4f} (se {std_errors[3]:.4f}), p={p_value:.4g}")
    return ConceptShiftResult(beta, std_errors, p_value, iteration)


@dataclass(frozen=True)
class Proportion:
    """Disadvantaged (male) share of the training split."""
    p_disadv: float
    total: Optional[int] = None


@dataclass(frozen=True)
class GroupFraction:
    """Keep a fraction of one group's training rows (default: females)."""
    fraction: float
    group: int = 1


@dataclass(frozen=True)
class HoursCap:
    """Drop disadvantaged training rows working ``hours`` or more per week."""
    hours: float
    column: str = "hours-per-week"


@dataclass(frozen=True)
class DropColumns:
    """Remove raw columns (all of their encoded columns)."""
    columns: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "columns", frozenset(self.columns))


@dataclass(frozen=True)
class Balanced5050:
    """Equal numbers of both groups in the training split."""


@dataclass(frozen=True)
class FullTraining:
    """Training split left as drawn."""


Scenario = Union[Proportion, GroupFraction, HoursCap, DropColumns, Balanced5050, FullTraining]


def scenario_label(scenario: Scenario) -> Tuple[str, Any]:
    """(sweep parameter name, value) used in result rows."""
    if isinstance(scenario, Proportion):
        return "p_disadv", scenario.p_disadv
    if isinstance(scenario, GroupFraction):
        return "group_fraction", scenario.fraction
    if isinstance(scenario, HoursCap):
        return "hours_cap", scenario.hours
    if isinstance(scenario, DropColumns):
        return "dropped", "+".join(sorted(scenario.columns))
    if isinstance(scenario, Balanced5050):
        return "balanced", 0.5
    return "full", 1.0


def build_scenario(enc: EncodedDataset, train: TabularDataset, scenario: Scenario,
                   seed: int = 0) -> TabularDataset:
    """
    Apply one experimental restriction to the training split.

    The test split is never touched; callers draw it before calling this.

    Raises:
        SamplingError: The restriction cannot be met with the available rows
    """
    counts = train.group_counts()
    if isinstance(scenario, FullTraining):
        return train

    if isinstance(scenario, Proportion):
        p = check_fraction("p_disadv", scenario.p_disadv, high=1.0, high_inclusive=False)
        low = 1.0 / max(counts[0] + counts[1], 1)
        high = counts[0] / max(counts[0] + counts[1], 1)
        try:
            k0, k1 = proportion_counts(counts[0], counts[1], p, scenario.total)
        except SamplingError:
            raise SamplingError(f"disadvantaged share {p} not achievable; feasible range [{low:.4f}, 1)", counts)
        rng = derive_rng(seed, "adult", "proportion")
        keep = np.concatenate([rng.choice(np.flatnonzero(train.sensitive == 0), k0, replace=False),
                               rng.choice(np.flatnonzero(train.sensitive == 1), k1, replace=False)])
        logger.info(f"Adult proportion {p}: {k0} disadvantaged + {k1} advantaged rows (natural share {high:.3f})")
        return train.subset(np.sort(keep))

    if isinstance(scenario, GroupFraction):
        fraction = check_fraction("fraction", scenario.fraction)
        idx = np.flatnonzero(train.sensitive == scenario.group)
        k = int(round(fraction * len(idx)))
        if k < 1:
            raise SamplingError(f"keeping {fraction} of group {scenario.group} leaves no rows", counts)
        kept = derive_rng(seed, "adult", "group-fraction").choice(idx, k, replace=False)
        others = np.flatnonzero(train.sensitive != scenario.group)
        return train.subset(np.sort(np.concatenate([kept, others])))

    if isinstance(scenario, HoursCap):
        cutoff = enc.standardize(scenario.column, scenario.hours)
        drop = (train.sensitive == 0) & (train.column(scenario.column) >= cutoff)
        logger.info(f"Hours cap {scenario.hours}: removed {int(drop.sum())} disadvantaged rows")
        if drop.sum() == counts[0]:
            raise SamplingError(f"hours cap {scenario.hours} removes every disadvantaged row", counts)
        return train.subset(~drop)

    if isinstance(scenario, DropColumns):
        dropped = [name for col in sorted(scenario.columns) for name in enc.columns_for(col)]
        return train.with_columns_dropped(dropped)

    if isinstance(scenario, Balanced5050):
        k = min(counts[0], counts[1])
        if k < 1:
            raise SamplingError("balancing needs rows from both groups", counts)
        rng = derive_rng(seed, "adult", "balanced")
        keep = np.concatenate([rng.choice(np.flatnonzero(train.sensitive == g), k, replace=False) for g in (0, 1)])
        return train.subset(np.sort(keep))

    raise ConfigurationError("scenario", f"unknown scenario {scenario!r}")
