"""
Tabular LIME explainer with a kernel-weighted ridge surrogate.

An instance is explained by sampling a neighbourhood around it, querying the
black box on every sample, weighting samples by an exponential kernel on
their distance to the instance and fitting a weighted ridge regression.
The surrogate's class at the instance is compared to the black box's class
to measure fidelity.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from core.blackbox import TrainedModel
from core.data_generator import BINARY, TabularDataset
from utils.errors import BatchExplanationError, ConfigurationError, SchemaError
from utils.seeding import derive_rng
from utils.validators import check_choice, check_int_at_least, check_positive

logger = logging.getLogger(__name__)

REGRESSION_TARGETS = ("probability", "label")


@dataclass(frozen=True)
class ExplainerConfig:
    """
    LIME settings.

    ``kernel_width=None`` means ``0.75 * sqrt(d)`` for d model features.
    ``categorical_columns`` marks extra columns to resample from their
    training frequencies; binary columns are always treated that way.
    """
    n_samples: int = 1000
    kernel_width: Optional[float] = None
    ridge_lambda: float = 1.0
    seed: int = 0
    categorical_columns: FrozenSet[str] = frozenset()
    regress_on: str = "probability"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "categorical_columns", frozenset(self.categorical_columns))
        check_int_at_least("n_samples", self.n_samples, 2)
        if self.kernel_width is not None:
            check_positive("kernel_width", self.kernel_width)
        check_positive("ridge_lambda", self.ridge_lambda, allow_zero=True)
        check_choice("regress_on", self.regress_on, REGRESSION_TARGETS)
        check_int_at_least("workers", self.workers, 1)

    def resolved_kernel_width(self, n_features: int) -> float:
        if self.kernel_width is not None:
            return float(self.kernel_width)
        return 0.75 * float(np.sqrt(n_features))


@dataclass(frozen=True, eq=False)
class CategoricalFeature:
    """
    A categorical feature resampled as a unit.

    ``columns`` holds one index for a plain binary/categorical column or
    several for a one-hot block; ``levels`` holds the observed value rows.
    """
    name: str
    columns: Tuple[int, ...]
    levels: np.ndarray
    frequencies: np.ndarray


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Training statistics the explainer perturbs and standardizes with."""
    feature_names: Tuple[str, ...]
    continuous: Tuple[int, ...]
    means: np.ndarray
    sds: np.ndarray
    categorical: Tuple[CategoricalFeature, ...] = ()

    def __post_init__(self):
        if np.any(np.asarray(self.sds) < 0):
            raise ConfigurationError("sds", "standard deviations must be >= 0")
        for feature in self.categorical:
            if not np.isclose(feature.frequencies.sum(), 1.0):
                raise ConfigurationError(feature.name, "level frequencies must sum to 1")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @classmethod
    def from_dataset(cls, ds: TabularDataset, feature_names: Sequence[str],
                     blocks: Iterable[Sequence[str]] = (),
                     categorical_columns: Iterable[str] = ()) -> "FeatureScaler":
        """
        Collect statistics for ``feature_names`` from training data.

        Args:
            ds: Training dataset
            feature_names: Features in model order
            blocks: One-hot blocks (column name groups) resampled jointly
            categorical_columns: Extra non-binary columns to treat as categorical
        """
        names = tuple(feature_names)
        missing = [n for n in names if n not in ds.names]
        if missing:
            raise SchemaError(f"training data lacks explainer features {missing}")
        position = {n: j for j, n in enumerate(names)}
        matrix = ds.X[:, [ds.column_index(n) for n in names]]
        extra = set(categorical_columns)

        groups: List[Tuple[str, Tuple[int, ...]]] = []
        in_block = set()
        for block in blocks:
            present = tuple(position[c] for c in block if c in position)
            if present:
                groups.append((_block_name(block), present))
                in_block.update(present)
        for j, name in enumerate(names):
            if j not in in_block and (ds.kind_of(name) == BINARY or name in extra):
                groups.append((name, (j,)))

        categorical = []
        for name, cols in groups:
            levels, counts = np.unique(matrix[:, list(cols)], axis=0, return_counts=True)
            categorical.append(CategoricalFeature(name, cols, levels, counts / counts.sum()))
        taken = {j for _, cols in groups for j in cols}
        continuous = tuple(j for j in range(len(names)) if j not in taken)
        cont = matrix[:, list(continuous)]
        return cls(
            feature_names=names,
            continuous=continuous,
            means=cont.mean(axis=0) if continuous else np.zeros(0),
            sds=cont.std(axis=0) if continuous else np.zeros(0),
            categorical=tuple(categorical),
        )

    def design_matrix(self, rows: np.ndarray) -> np.ndarray:
        """Surrogate inputs: standardized continuous features, raw categorical values."""
        design = np.array(rows, dtype=float, copy=True)
        if self.continuous:
            idx = list(self.continuous)
            safe = np.where(self.sds > 0, self.sds, 1.0)
            design[:, idx] = (design[:, idx] - self.means) / safe
        return design


def _block_name(block: Sequence[str]) -> str:
    first = str(block[0])
    return first.split("=", 1)[0] if "=" in first else first


@dataclass(frozen=True)
class LocalExplanation:
    """Surrogate fitted around one instance and its fidelity inputs."""
    instance_id: int
    feature_weights: Dict[str, float]
    intercept: float
    surrogate_prob_at_instance: float
    blackbox_prob: float
    group: Optional[int] = None
    singular: bool = False
    score: float = float("nan")
    surrogate_class: int = field(init=False)
    blackbox_class: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "surrogate_class", int(self.surrogate_prob_at_instance >= 0.5))
        object.__setattr__(self, "blackbox_class", int(self.blackbox_prob >= 0.5))


class SurrogateFit(NamedTuple):
    coefficients: np.ndarray
    intercept: float
    singular: bool
    score: float


def _instance_vector(instance: Any, names: Sequence[str]) -> np.ndarray:
    if isinstance(instance, (Mapping, pd.Series)):
        missing = [n for n in names if n not in instance]
        if missing:
            raise SchemaError(f"instance lacks features {missing}")
        return np.array([float(instance[n]) for n in names])
    vector = np.asarray(instance, dtype=float).reshape(-1)
    if vector.shape[0] != len(names):
        raise SchemaError(f"instance has {vector.shape[0]} values, expected {len(names)} ({list(names)})")
    return vector


def perturb(instance: Any, scaler: FeatureScaler, cfg: ExplainerConfig,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Sample ``cfg.n_samples`` rows around ``instance``.

    Row 0 is the instance itself. Continuous features are drawn as
    ``instance + z * sd``; categorical features (and one-hot blocks) are
    redrawn from their training frequencies.
    """
    x = _instance_vector(instance, scaler.feature_names)
    rng = rng if rng is not None else derive_rng(cfg.seed, "perturb")
    n = cfg.n_samples
    samples = np.tile(x, (n, 1))
    if scaler.continuous:
        idx = list(scaler.continuous)
        z = rng.standard_normal((n - 1, len(idx)))
        samples[1:, idx] = x[idx] + z * scaler.sds
    for feature in scaler.categorical:
        picks = rng.choice(len(feature.levels), size=n - 1, p=feature.frequencies)
        samples[1:, list(feature.columns)] = feature.levels[picks]
    return samples


def kernel_distances(perturbations: np.ndarray, instance: Any, scaler: FeatureScaler) -> np.ndarray:
    """Euclidean distance over standardized continuous features plus categorical mismatches."""
    x = _instance_vector(instance, scaler.feature_names)
    P = np.atleast_2d(np.asarray(perturbations, dtype=float))
    squared = np.zeros(P.shape[0])
    if scaler.continuous:
        idx = list(scaler.continuous)
        safe = np.where(scaler.sds > 0, scaler.sds, np.inf)
        squared += np.sum(((P[:, idx] - x[idx]) / safe) ** 2, axis=1)
    for feature in scaler.categorical:
        cols = list(feature.columns)
        squared += np.any(P[:, cols] != x[cols], axis=1)
    return np.sqrt(squared)


def kernel_weights(perturbations: np.ndarray, instance: Any, scaler: FeatureScaler,
                   cfg: ExplainerConfig) -> np.ndarray:
    """Exponential locality weights ``exp(-d^2 / width^2)``."""
    width = cfg.resolved_kernel_width(scaler.n_features)
    d = kernel_distances(perturbations, instance, scaler)
    return np.exp(-(d ** 2) / width ** 2)


def fit_surrogate(X: np.ndarray, y: np.ndarray, weights: np.ndarray,
                  ridge_lambda: float) -> SurrogateFit:
    """
    Weighted ridge regression with an unpenalized intercept.

    Centres X and y with the weighted means and solves
    ``(Xc' W Xc + lambda I) beta = Xc' W yc``. A rank-deficient system is
    solved with the pseudoinverse and flagged as singular.

    Args:
        X: Design matrix (n x d), n >= 2
        y: Regression targets
        weights: Non-negative sample weights, not all zero
        ridge_lambda: L2 penalty on the slopes

    Returns:
        SurrogateFit(coefficients, intercept, singular, weighted R^2)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if X.shape[0] < 2 or len(y) != X.shape[0] or len(w) != X.shape[0]:
        raise ConfigurationError("fit_surrogate", f"need >= 2 aligned rows, got X {X.shape}, y {y.shape}, w {w.shape}")
    if np.any(w < 0) or not np.any(w > 0):
        raise ConfigurationError("weights", "must be non-negative and not all zero")
    check_positive("ridge_lambda", ridge_lambda, allow_zero=True)

    total = w.sum()
    x_mean = w @ X / total
    y_mean = float(w @ y / total)
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ (Xc * w[:, None]) + ridge_lambda * np.eye(X.shape[1])
    rhs = Xc.T @ (w * yc)

    singular = np.linalg.matrix_rank(gram) < gram.shape[0]
    if singular:
        coef = scipy.linalg.pinv(gram) @ rhs
    else:
        coef = scipy.linalg.solve(gram, rhs, assume_a="pos")
    intercept = y_mean - float(x_mean @ coef)

    residual = y - (X @ coef + intercept)
    ss_tot = float(w @ (yc ** 2))
    score = 1.0 - float(w @ residual ** 2) / ss_tot if ss_tot > 0 else 1.0
    return SurrogateFit(coef, intercept, bool(singular), score)


def explain(model: TrainedModel, instance: Any, cfg: ExplainerConfig, scaler: FeatureScaler,
            instance_id: int = 0, group: Optional[int] = None) -> LocalExplanation:
    """
    Explain one instance.

    The neighbourhood is drawn from a stream keyed by ``(cfg.seed,
    instance_id)`` so the result depends on nothing else.
    """
    if tuple(scaler.feature_names) != tuple(model.feature_names):
        raise SchemaError(
            f"scaler features {list(scaler.feature_names)} do not match model features {list(model.feature_names)}"
        )
    x = _instance_vector(instance, scaler.feature_names)
    samples = perturb(x, scaler, cfg, derive_rng(cfg.seed, "lime", int(instance_id)))
    probs = model.predict_proba_matrix(samples)
    target = probs if cfg.regress_on == "probability" else (probs >= 0.5).astype(float)
    weights = kernel_weights(samples, x, scaler, cfg)
    design = scaler.design_matrix(samples)
    fit = fit_surrogate(design, target, weights, cfg.ridge_lambda)
    if fit.singular:
        logger.warning(f"Instance {instance_id}: singular surrogate system, used pseudoinverse")

    surrogate_prob = fit.intercept + float(design[0] @ fit.coefficients)
    return LocalExplanation(
        instance_id=int(instance_id),
        feature_weights={name: float(c) for name, c in zip(scaler.feature_names, fit.coefficients)},
        intercept=fit.intercept,
        surrogate_prob_at_instance=surrogate_prob,
        blackbox_prob=float(probs[0]),
        group=None if group is None else int(group),
        singular=fit.singular,
        score=fit.score,
    )


def agreement(expl: LocalExplanation) -> int:
    """1 when surrogate and black box predict the same class at the instance."""
    return int(expl.surrogate_class == expl.blackbox_class)


def explain_batch(model: TrainedModel, instances: Any, cfg: ExplainerConfig, scaler: FeatureScaler,
                  instance_ids: Optional[Sequence[int]] = None,
                  groups: Optional[Sequence[int]] = None) -> List[LocalExplanation]:
    """
    Explain many instances, in input order.

    ``instances`` may be a TabularDataset (ids and groups then come from
    its row ids and sensitive column) or a matrix in model feature order.
    Work is spread over ``cfg.workers`` threads; results are identical to
    sequential calls.

    Raises:
        BatchExplanationError: One or more instances failed
    """
    if isinstance(instances, TabularDataset):
        ids = instances.row_ids if instance_ids is None else instance_ids
        groups = instances.sensitive if groups is None else groups
        matrix = model.feature_matrix(instances)
    else:
        matrix = np.atleast_2d(np.asarray(instances, dtype=float))
        ids = np.arange(matrix.shape[0]) if instance_ids is None else instance_ids
    ids = [int(i) for i in ids]
    if len(ids) != matrix.shape[0]:
        raise ConfigurationError("instance_ids", f"{len(ids)} ids for {matrix.shape[0]} instances")
    group_list = [None] * len(ids) if groups is None else [int(g) for g in groups]

    def run(k: int) -> LocalExplanation:
        return explain(model, matrix[k], cfg, scaler, ids[k], group_list[k])

    results: Dict[int, LocalExplanation] = {}
    failures: Dict[int, BaseException] = {}
    if cfg.workers == 1:
        for k in range(len(ids)):
            try:
                results[k] = run(k)
            except Exception as e:
                failures[k] = e
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {k: pool.submit(run, k) for k in range(len(ids))}
            for k, future in futures.items():
                try:
                    results[k] = future.result()
                except Exception as e:
                    failures[k] = e
    if failures:
        raise BatchExplanationError(failures)
    logger.debug(f"Explained {len(results)} instances with {cfg.workers} worker(s)")
    return [results[k] for k in range(len(ids))]


def explanations_to_frame(expls: Sequence[LocalExplanation]) -> pd.DataFrame:
    """Flatten explanations: ids, group, both probabilities, agreement, one column per weight."""
    rows = []
    for e in expls:
        row = {
            "instance_id": e.instance_id,
            "group": e.group,
            "blackbox_prob": e.blackbox_prob,
            "surrogate_prob": e.surrogate_prob_at_instance,
            "agreement": agreement(e),
        }
        row.update({f"w_{name}": weight for name, weight in e.feature_weights.items()})
        rows.append(row)
    return pd.DataFrame(rows)
