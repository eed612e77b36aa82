"""
Synthetic population generator for the four fidelity-audit objectives.

All four processes share the same skeleton:

    A ~ Bernoulli(0.5)            sensitive attribute (0 = disadvantaged)
    C ~ Normal(0, 1)              covariate with a direct effect on Y
    L = Normal(0, sd) + a*A + c*C mediator
    Y ~ Bernoulli(step(i))        i is objective specific

Interventions (proportion restriction, covariate-shift truncation) are
applied to already generated datasets and always return new datasets.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from utils.errors import ConfigurationError, SamplingError, SchemaError
from utils.seeding import derive_rng
from utils.validators import (
    DataValidator,
    check_finite,
    check_fraction,
    check_int_at_least,
)

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"

SYNTHETIC_COLUMNS = ("A", "C", "L")


class Objective(Enum):
    """Data-generating process families."""
    SAMPLE_SIZE = "sample_size"
    COVARIATE_SHIFT = "covariate_shift"
    CONCEPT_SHIFT = "concept_shift"
    OMITTED_VARIABLE = "omitted_variable"

    @classmethod
    def parse(cls, value: Union[str, int, "Objective"]) -> "Objective":
        """Accept enum values, names, CamelCase names or objective numbers 1-4."""
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        numbered = {"1": cls.SAMPLE_SIZE, "2": cls.COVARIATE_SHIFT,
                    "3": cls.CONCEPT_SHIFT, "4": cls.OMITTED_VARIABLE}
        if text in numbered:
            return numbered[text]
        normalized = text.replace("-", "_").lower()
        aliases = {
            "samplesize": cls.SAMPLE_SIZE, "proportion": cls.SAMPLE_SIZE,
            "covariateshift": cls.COVARIATE_SHIFT, "overlap": cls.COVARIATE_SHIFT,
            "conceptshift": cls.CONCEPT_SHIFT, "concept": cls.CONCEPT_SHIFT,
            "omittedvariable": cls.OMITTED_VARIABLE, "omitted": cls.OMITTED_VARIABLE,
        }
        for member in cls:
            if normalized in (member.value, member.name.lower()):
                return member
        if normalized.replace("_", "") in aliases:
            return aliases[normalized.replace("_", "")]
        raise ConfigurationError("objective", f"unknown objective {value!r}")


# Outcome coefficients per objective:
#   sample size / covariate shift: (c_C, c_L, intercept)
#   concept shift:                  (c_C, c_L, c_AL, intercept), plus beta
#   omitted variable:               (c_L, intercept), plus alpha
DEFAULT_OUTCOME_COEFFS = {
    Objective.SAMPLE_SIZE: (0.5, -1.5, 0.5),
    Objective.COVARIATE_SHIFT: (0.5, -1.5, 0.5),
    Objective.CONCEPT_SHIFT: (0.5, -1.0, 1.5, -0.2),
    Objective.OMITTED_VARIABLE: (1.0, -0.2),
}


@dataclass(frozen=True)
class DataGenSpec:
    """Full parameterization of one synthetic data-generating process."""
    objective: Objective
    n: int = 20000
    coef_L_on_A: float = 0.7
    coef_L_on_C: float = 0.3
    noise_sd_L: float = 0.5
    outcome_coeffs: Tuple[float, ...] = (0.5, -1.5, 0.5)
    beta: Optional[float] = None
    alpha: Optional[float] = None
    prob_low: float = 0.1
    prob_high: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective.parse(self.objective))
        object.__setattr__(self, "outcome_coeffs", tuple(float(c) for c in self.outcome_coeffs))
        self.validate()

    def validate(self) -> None:
        """Raise ConfigurationError naming the first offending field."""
        check_int_at_least("n", self.n, 10)
        check_int_at_least("seed", self.seed, 0)
        for name in ("coef_L_on_A", "coef_L_on_C", "noise_sd_L"):
            check_finite(name, getattr(self, name))
        if self.noise_sd_L < 0:
            raise ConfigurationError("noise_sd_L", f"must be >= 0, got {self.noise_sd_L}")
        check_fraction("prob_low", self.prob_low, high=1.0, high_inclusive=False)
        check_fraction("prob_high", self.prob_high, high=1.0, high_inclusive=False)
        if not self.prob_low < self.prob_high:
            raise ConfigurationError("prob_low", f"must be < prob_high ({self.prob_low} >= {self.prob_high})")

        expected = len(DEFAULT_OUTCOME_COEFFS[self.objective])
        if len(self.outcome_coeffs) != expected:
            raise ConfigurationError(
                "outcome_coeffs",
                f"{self.objective.value} needs {expected} coefficients, got {len(self.outcome_coeffs)}",
            )
        for c in self.outcome_coeffs:
            check_finite("outcome_coeffs", c)

        if self.objective is Objective.CONCEPT_SHIFT:
            if self.beta is None:
                raise ConfigurationError("beta", "required for the concept-shift objective")
            check_finite("beta", self.beta)
        elif self.beta is not None:
            raise ConfigurationError("beta", "only valid for the concept-shift objective")

        if self.objective is Objective.OMITTED_VARIABLE:
            if self.alpha is None:
                raise ConfigurationError("alpha", "required for the omitted-variable objective")
            check_finite("alpha", self.alpha)
        elif self.alpha is not None:
            raise ConfigurationError("alpha", "only valid for the omitted-variable objective")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["objective"] = self.objective.value
        data["outcome_coeffs"] = list(self.outcome_coeffs)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DataGenSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(sorted(unknown)[0], "unknown DataGenSpec field")
        return cls(**data)


def objective_spec(objective: Union[str, Objective], **overrides) -> DataGenSpec:
    """
    Default DataGenSpec for an objective.

    Concept shift uses the tighter mediator noise (sd 0.1) and defaults
    beta to the "high" shift; the omitted-variable process uses a weaker
    A -> L effect (0.3) and defaults alpha to 1.0.
    """
    objective = Objective.parse(objective)
    params: Dict[str, Any] = {
        "objective": objective,
        "outcome_coeffs": DEFAULT_OUTCOME_COEFFS[objective],
    }
    if objective is Objective.CONCEPT_SHIFT:
        params.update(noise_sd_L=0.1, beta=-0.5)
    elif objective is Objective.OMITTED_VARIABLE:
        params.update(coef_L_on_A=0.3, alpha=1.0)
    params.update(overrides)
    return DataGenSpec(**params)


@dataclass(frozen=True)
class Column:
    """Named feature column."""
    name: str
    kind: str = CONTINUOUS


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """
    Immutable feature matrix with labels and a binary sensitive attribute.

    ``row_ids`` keep the identity of rows across subsets so splits and
    explanation records can be traced back to the source population.
    """
    columns: Tuple[Column, ...]
    X: np.ndarray
    y: np.ndarray
    sensitive: np.ndarray
    provenance: Any = None
    row_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X.reshape(-1, len(self.columns))
        y = np.asarray(self.y)
        sensitive = np.asarray(self.sensitive)
        row_ids = (np.arange(X.shape[0], dtype=np.int64) if self.row_ids is None
                   else np.asarray(self.row_ids, dtype=np.int64).copy())
        columns = tuple(c if isinstance(c, Column) else Column(*c) for c in self.columns)
        DataValidator().validate_dataset(
            [c.name for c in columns], [c.kind for c in columns], X, y, sensitive
        )
        y = y.astype(np.int64)
        sensitive = sensitive.astype(np.int64)
        if len(row_ids) != X.shape[0]:
            raise SchemaError(f"{len(row_ids)} row ids for {X.shape[0]} rows")
        for arr in (X, y, sensitive, row_ids):
            arr.setflags(write=False)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sensitive", sensitive)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    def __len__(self) -> int:
        return self.n_rows

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"column {name!r} not in dataset columns {list(self.names)}")

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.column_index(name)]

    def kind_of(self, name: str) -> str:
        return self.columns[self.column_index(name)].kind

    def group_mask(self, group: int) -> np.ndarray:
        return self.sensitive == group

    def group_counts(self) -> Dict[int, int]:
        return {g: int(np.sum(self.sensitive == g)) for g in (0, 1)}

    def subset(self, rows: Union[np.ndarray, Sequence[int]]) -> "TabularDataset":
        """New dataset holding the selected rows (boolean mask or indices)."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return TabularDataset(self.columns, self.X[rows], self.y[rows], self.sensitive[rows],
                              self.provenance, self.row_ids[rows])

    def with_columns_dropped(self, names: Iterable[str]) -> "TabularDataset":
        drop = set(names)
        for name in drop:
            self.column_index(name)
        keep = [j for j, c in enumerate(self.columns) if c.name not in drop]
        return TabularDataset(tuple(self.columns[j] for j in keep), self.X[:, keep], self.y,
                              self.sensitive, self.provenance, self.row_ids)

    def with_provenance(self, provenance: Any) -> "TabularDataset":
        return replace(self, provenance=provenance)

    def to_frame(self, include_label: bool = True) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=list(self.names))
        for c in self.columns:
            if c.kind == BINARY:
                frame[c.name] = frame[c.name].astype(np.int64)
        if include_label:
            frame["Y"] = self.y
        return frame


def step_outcome_prob(i: Union[float, np.ndarray], spec: DataGenSpec) -> Union[float, np.ndarray]:
    """P(Y=1): ``prob_low`` below the 0 threshold, ``prob_high`` at or above it."""
    values = np.where(np.asarray(i) < 0, spec.prob_low, spec.prob_high)
    return float(values) if np.ndim(values) == 0 else values


def outcome_index(spec: DataGenSpec, A: np.ndarray, C: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Objective-specific linear index ``i`` fed to the step function."""
    coeffs = spec.outcome_coeffs
    if spec.objective in (Objective.SAMPLE_SIZE, Objective.COVARIATE_SHIFT):
        c_C, c_L, intercept = coeffs
        return c_C * C + c_L * L + intercept
    if spec.objective is Objective.CONCEPT_SHIFT:
        c_C, c_L, c_AL, intercept = coeffs
        return c_C * C + c_L * L + c_AL * A * L + spec.beta * (1 - A) * L + intercept
    c_L, intercept = coeffs
    return spec.alpha * C + c_L * L + intercept


def sample_population(spec: DataGenSpec) -> TabularDataset:
    """
    Draw ``spec.n`` rows from the structural equations.

    Each variable uses its own random stream so changing how one column
    is drawn never shifts the others.

    Args:
        spec: Data-generating process parameters

    Returns:
        Dataset with columns [A, C, L], labels Y and sensitive = A
    """
    spec.validate()
    n = spec.n
    A = (derive_rng(spec.seed, "dgp", "A").random(n) < 0.5).astype(np.int64)
    C = derive_rng(spec.seed, "dgp", "C").standard_normal(n)
    noise = derive_rng(spec.seed, "dgp", "L").normal(0.0, spec.noise_sd_L, n)
    L = noise + spec.coef_L_on_A * A + spec.coef_L_on_C * C
    p = step_outcome_prob(outcome_index(spec, A, C, L), spec)
    Y = (derive_rng(spec.seed, "dgp", "Y").random(n) < p).astype(np.int64)

    logger.debug(f"Sampled {n} rows for {spec.objective.value} (seed {spec.seed}); P(Y=1)={Y.mean():.3f}")
    return TabularDataset(
        columns=(Column("A", BINARY), Column("C"), Column("L")),
        X=np.column_stack([A, C, L]),
        y=Y,
        sensitive=A,
        provenance=spec,
    )


def proportion_counts(n0: int, n1: int, p_disadv: float,
                      total: Optional[int] = None) -> Tuple[int, int]:
    """
    Group sizes realising a disadvantaged share ``p_disadv``.

    Without ``total`` the largest feasible dataset is used.
    """
    if total is None:
        total = int(np.floor(min(n0 / p_disadv, n1 / (1.0 - p_disadv)) + 1e-9))
    k0 = int(round(p_disadv * total))
    k1 = int(total - k0)
    if k0 < 1 or k1 < 1 or k0 > n0 or k1 > n1:
        raise SamplingError(
            f"cannot realise disadvantaged share {p_disadv} with {total} rows "
            f"(needs {k0} disadvantaged and {k1} advantaged)",
            {0: n0, 1: n1},
        )
    return k0, k1


def apply_proportion_filter(ds: TabularDataset, p_disadv: float, seed: int,
                            total: Optional[int] = None) -> TabularDataset:
    """
    Subsample so the disadvantaged group (sensitive == 0) makes up ``p_disadv``.

    Rows are drawn uniformly without replacement within each group and
    returned in their original order.

    Args:
        ds: Source dataset containing both groups
        p_disadv: Target share of the disadvantaged group, in (0, 0.5]
        seed: Seed for the within-group draws
        total: Optional fixed output size; largest feasible size otherwise

    Returns:
        The restricted dataset
    """
    check_fraction("p_disadv", p_disadv, high=0.5)
    idx0 = np.flatnonzero(ds.sensitive == 0)
    idx1 = np.flatnonzero(ds.sensitive == 1)
    if len(idx0) == 0 or len(idx1) == 0:
        raise SamplingError("proportion filter needs rows from both groups", ds.group_counts())
    k0, k1 = proportion_counts(len(idx0), len(idx1), p_disadv, total)
    rng = derive_rng(seed, "proportion")
    keep = np.concatenate([rng.choice(idx0, k0, replace=False), rng.choice(idx1, k1, replace=False)])
    logger.info(f"Proportion filter p={p_disadv}: kept {k0} disadvantaged + {k1} advantaged rows")
    return ds.subset(np.sort(keep))


def apply_covariate_shift(ds: TabularDataset, overlap: float,
                          column: str = "L") -> Tuple[TabularDataset, float]:
    """
    Truncate the disadvantaged group below an empirical quantile of ``column``.

    The threshold ``t`` is the (1 - overlap) quantile of the column among
    disadvantaged rows; those rows with values below ``t`` are removed.
    overlap = 1 returns the input unchanged with ``t = -inf``.

    Returns:
        (shifted dataset, threshold)
    """
    check_fraction("overlap", overlap)
    mask0 = ds.sensitive == 0
    if not mask0.any():
        raise SamplingError("covariate shift needs a non-empty disadvantaged group", ds.group_counts())
    if overlap >= 1.0:
        return ds, float("-inf")
    values = ds.column(column)
    threshold = float(np.quantile(values[mask0], 1.0 - overlap))
    drop = mask0 & (values < threshold)
    logger.info(f"Covariate shift overlap={overlap}: threshold {threshold:.4f}, removed {int(drop.sum())} rows")
    return ds.subset(~drop), threshold


def split_indices(n_rows: int, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted train/test row indices of a uniform random split."""
    check_fraction("train_fraction", train_fraction, high=1.0, high_inclusive=False)
    order = derive_rng(seed, "split").permutation(n_rows)
    n_train = int(round(train_fraction * n_rows))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_train_test(ds: TabularDataset, train_fraction: float,
                     seed: int) -> Tuple[TabularDataset, TabularDataset]:
    """Disjoint uniform random split; both halves keep the source row order."""
    train_idx, test_idx = split_indices(ds.n_rows, train_fraction, seed)
    return ds.subset(train_idx), ds.subset(test_idx)


def summary_stats(ds: TabularDataset) -> pd.DataFrame:
    """Per-group count, mean/sd of continuous columns and P(Y=1)."""
    frame = ds.to_frame(include_label=False)
    frame["group"] = ds.sensitive
    frame["Y"] = ds.y
    continuous = [c.name for c in ds.columns if c.kind == CONTINUOUS]
    rows = []
    for group, part in frame.groupby("group", sort=True):
        row = {"group": int(group), "count": int(len(part))}
        for name in continuous:
            row[f"mean_{name}"] = float(part[name].mean())
            row[f"sd_{name}"] = float(part[name].std(ddof=1)) if len(part) > 1 else float("nan")
        row["p_y1"] = float(part["Y"].mean())
        rows.append(row)
    return pd.DataFrame(rows).set_index("group")


def save_dataset(ds: TabularDataset, path: Union[str, Path]) -> Path:
    """
    Write a synthetic dataset as ``A,C,L,Y`` CSV plus a YAML sidecar.

    Returns:
        Path of the CSV file
    """
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.to_frame().to_csv(path, index=False, float_format="%.17g")
    meta = ds.provenance.to_dict() if isinstance(ds.provenance, DataGenSpec) else {"source": str(ds.provenance)}
    with open(sidecar_path(path), "w") as f:
        yaml.safe_dump(meta, f, sort_keys=False)
    logger.info(f"Dataset written to {path}")
    return path


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.yaml")


def load_dataset(path: Union[str, Path]) -> TabularDataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in (*SYNTHETIC_COLUMNS, "Y") if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    provenance: Any = str(path)
    meta_path = sidecar_path(path)
    if meta_path.exists():
        with open(meta_path) as f:
            meta = yaml.safe_load(f) or {}
        provenance = DataGenSpec.from_dict(meta) if "objective" in meta else meta
    A = frame["A"].to_numpy(dtype=np.int64)
    return TabularDataset(
        columns=(Column("A", BINARY), Column("C"), Column("L")),
        X=frame[list(SYNTHETIC_COLUMNS)].to_numpy(dtype=float),
        y=frame["Y"].to_numpy(dtype=np.int64),
        sensitive=A,
        provenance=provenance,
    )
