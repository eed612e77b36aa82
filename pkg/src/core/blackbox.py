"""
Black-box classifiers: logistic regression and a 4-layer ReLU MLP.

Both families are plain numpy networks trained full-batch (optionally
mini-batch) with Adam on binary cross-entropy, with weight decay added to
the gradient. Backpropagation is written out by hand; ``gradient_check``
compares it against central finite differences.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.data_generator import BINARY, TabularDataset
from utils.errors import (
    ConfigurationError,
    IncompatibleVersionError,
    ModelFileError,
    NumericalFailure,
    SchemaError,
)
from utils.seeding import derive_rng
from utils.validators import check_int_at_least, check_positive

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN_DIMS = (50, 100, 200)
LOGIT_CLIP = 30.0
MODEL_FILE_FORMAT = "xdaudit-model"
MODEL_FILE_VERSION = 1

Layer = Tuple[np.ndarray, np.ndarray]


class ModelKind(Enum):
    """Black-box model families."""
    LR = "LR"
    MLP = "MLP"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and input features of a black-box model."""
    kind: ModelKind
    feature_names: Tuple[str, ...]
    hidden_dims: Tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    seed: int = 0

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, ModelKind) else ModelKind(str(self.kind).upper())
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.feature_names:
            raise ConfigurationError("feature_names", "at least one feature is required")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ConfigurationError("feature_names", f"duplicate features in {list(self.feature_names)}")
        if kind is ModelKind.MLP:
            if not self.hidden_dims:
                raise ConfigurationError("hidden_dims", "an MLP needs at least one hidden layer")
            for h in self.hidden_dims:
                check_int_at_least("hidden_dims", h, 1)

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        hidden = self.hidden_dims if self.kind is ModelKind.MLP else ()
        return (len(self.feature_names), *hidden, 1)

    @classmethod
    def for_variant(cls, variant: str, columns: Sequence[str], sensitive_columns: Sequence[str] = ("A",),
                    omitted_columns: Sequence[str] = ("C",), seed: int = 0,
                    hidden_dims: Tuple[int, ...] = DEFAULT_HIDDEN_DIMS) -> "ModelSpec":
        """
        Resolve a variant name such as ``MLP_noA`` or ``LR_noA_noC``.

        ``A``/``C`` tokens keep the sensitive/omitted columns (the default);
        ``noA``/``noC`` drop them.
        """
        kind_token, *tokens = variant.split("_")
        try:
            kind = ModelKind(kind_token.upper())
        except ValueError:
            raise ConfigurationError("model_variant", f"unknown model family in {variant!r}")
        excluded = set()
        for token in tokens:
            if token == "noA":
                excluded.update(sensitive_columns)
            elif token == "noC":
                excluded.update(omitted_columns)
            elif token not in ("A", "C"):
                raise ConfigurationError("model_variant", f"unknown token {token!r} in {variant!r}")
        features = tuple(c for c in columns if c not in excluded)
        return cls(kind=kind, feature_names=features, hidden_dims=hidden_dims, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "feature_names": list(self.feature_names),
                "hidden_dims": list(self.hidden_dims), "seed": int(self.seed)}


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings. ``batch_size=None`` trains full-batch."""
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        check_int_at_least("epochs", self.epochs, 1)
        check_positive("learning_rate", self.learning_rate)
        check_positive("weight_decay", self.weight_decay, allow_zero=True)
        check_positive("adam_eps", self.adam_eps)
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ConfigurationError("adam_betas", f"expected two values in [0, 1), got {self.adam_betas}")
        if self.batch_size is not None:
            check_int_at_least("batch_size", self.batch_size, 1)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Immutable trained black box with its input standardizer."""
    spec: ModelSpec
    layers: Tuple[Layer, ...]
    scaler_mean: np.ndarray
    scaler_scale: np.ndarray
    training_log: Tuple[float, ...] = ()
    feature_index_map: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple((np.array(W, dtype=float), np.array(b, dtype=float).reshape(-1)) for W, b in self.layers)
        dims = self.spec.layer_dims
        if len(layers) != len(dims) - 1:
            raise ConfigurationError("layers", f"expected {len(dims) - 1} layers, got {len(layers)}")
        for k, (W, b) in enumerate(layers):
            if W.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ConfigurationError(
                    "layers", f"layer {k} has shapes {W.shape}/{b.shape}, expected {(dims[k], dims[k + 1])}"
                )
            W.setflags(write=False)
            b.setflags(write=False)
        mean = np.array(self.scaler_mean, dtype=float).reshape(-1)
        scale = np.array(self.scaler_scale, dtype=float).reshape(-1)
        if mean.shape != (dims[0],) or scale.shape != (dims[0],):
            raise ConfigurationError("scaler", "scaler size does not match the feature count")
        mean.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "scaler_mean", mean)
        object.__setattr__(self, "scaler_scale", scale)
        object.__setattr__(self, "training_log", tuple(float(v) for v in self.training_log))
        object.__setattr__(self, "feature_index_map",
                           {name: j for j, name in enumerate(self.spec.feature_names)})

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return self.spec.feature_names

    def feature_matrix(self, rows: Any) -> np.ndarray:
        """Extract the model's features, in model order, from ``rows``."""
        names = self.spec.feature_names
        if isinstance(rows, TabularDataset):
            available = rows.names
            missing = [n for n in names if n not in available]
            if missing:
                raise SchemaError(f"rows lack model features {missing}")
            return rows.X[:, [available.index(n) for n in names]]
        if isinstance(rows, pd.DataFrame):
            missing = [n for n in names if n not in rows.columns]
            if missing:
                raise SchemaError(f"rows lack model features {missing}")
            return rows[list(names)].to_numpy(dtype=float)
        if isinstance(rows, Mapping):
            missing = [n for n in names if n not in rows]
            if missing:
                raise SchemaError(f"rows lack model features {missing}")
            return np.column_stack([np.atleast_1d(np.asarray(rows[n], dtype=float)) for n in names])
        matrix = np.atleast_2d(np.asarray(rows, dtype=float))
        if matrix.shape[1] != len(names):
            raise SchemaError(f"expected {len(names)} feature columns {list(names)}, got {matrix.shape[1]}")
        return matrix

    def logits(self, matrix: np.ndarray) -> np.ndarray:
        """Pre-sigmoid output for a raw feature matrix in model order."""
        Z = (np.asarray(matrix, dtype=float) - self.scaler_mean) / self.scaler_scale
        return forward(self.layers, Z)[0]

    def predict_proba_matrix(self, matrix: np.ndarray) -> np.ndarray:
        return sigmoid(np.clip(self.logits(matrix), -LOGIT_CLIP, LOGIT_CLIP))

    def predict_proba(self, rows: Any) -> np.ndarray:
        """P(class 1) per row, strictly inside (0, 1)."""
        return self.predict_proba_matrix(self.feature_matrix(rows))

    def predict_class(self, rows: Any, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(rows) >= threshold).astype(np.int64)


def forward(layers: Sequence[Layer], Z: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Affine layers with ReLU between them.

    Returns:
        (logits of shape (n,), list of layer inputs for backprop)
    """
    activations = [Z]
    h = Z
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < last:
            h = np.maximum(h, 0.0)
            activations.append(h)
    return h[:, 0], activations


def bce_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, evaluated stably from logits."""
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def objective(layers: Sequence[Layer], Z: np.ndarray, y: np.ndarray, weight_decay: float = 0.0) -> float:
    """BCE plus the L2 penalty whose gradient is the coupled weight decay."""
    loss = bce_from_logits(forward(layers, Z)[0], y)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(W * W) + np.sum(b * b)) for W, b in layers)
    return loss


def loss_and_gradients(layers: Sequence[Layer], Z: np.ndarray, y: np.ndarray,
                       weight_decay: float = 0.0) -> Tuple[float, List[Layer]]:
    """
    Data loss (BCE) and gradients of the full objective.

    The reported loss excludes the penalty; gradients include
    ``weight_decay * parameter``.
    """
    logits, activations = forward(layers, Z)
    loss = bce_from_logits(logits, y)
    delta = ((sigmoid(logits) - y) / len(y))[:, None]
    grads: List[Layer] = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        W, b = layers[k]
        h_in = activations[k]
        dW = h_in.T @ delta
        db = delta.sum(axis=0)
        if weight_decay:
            dW = dW + weight_decay * W
            db = db + weight_decay * b
        grads[k] = (dW, db)
        if k > 0:
            delta = (delta @ W.T) * (h_in > 0)
    return loss, grads


def init_parameters(spec: ModelSpec, rng: np.random.Generator) -> List[Layer]:
    """Zeros for LR; He-uniform fan-in weights and zero biases for the MLP."""
    dims = spec.layer_dims
    if spec.kind is ModelKind.LR:
        return [(np.zeros((dims[0], 1)), np.zeros(1))]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)))
    return layers


def fit_standardizer(matrix: np.ndarray, kinds: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Training mean/sd for continuous features; binary features pass through."""
    mean = np.zeros(matrix.shape[1])
    scale = np.ones(matrix.shape[1])
    for j, kind in enumerate(kinds):
        if kind != BINARY:
            mean[j] = matrix[:, j].mean()
            sd = matrix[:, j].std()
            scale[j] = sd if sd > 0 else 1.0
    return mean, scale


class AdamOptimizer:
    """Adam with coupled L2 weight decay, operating on layer tuples in place."""

    def __init__(self, layers: List[List[np.ndarray]], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [[np.zeros_like(p) for p in layer] for layer in layers]
        self.v = [[np.zeros_like(p) for p in layer] for layer in layers]
        self.t = 0

    def step(self, layers: List[List[np.ndarray]], grads: Sequence[Layer]) -> None:
        beta1, beta2 = self.cfg.adam_betas
        self.t += 1
        correction1 = 1.0 - beta1 ** self.t
        correction2 = 1.0 - beta2 ** self.t
        for k, layer_grads in enumerate(grads):
            for j, g in enumerate(layer_grads):
                m = self.m[k][j]
                v = self.v[k][j]
                m *= beta1
                m += (1.0 - beta1) * g
                v *= beta2
                v += (1.0 - beta2) * g * g
                step = self.cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.cfg.adam_eps)
                layers[k][j] -= step


def train(spec: ModelSpec, train_ds: TabularDataset, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    """
    Fit a black box on ``train_ds`` with Adam on BCE.

    Args:
        spec: Model family, features and seed
        train_ds: Training dataset (must contain every spec feature)
        cfg: Optimizer settings

    Returns:
        The trained, immutable model

    Raises:
        SchemaError: A spec feature is missing from the dataset
        NumericalFailure: The loss became non-finite
    """
    if train_ds.n_rows == 0:
        raise ConfigurationError("train", "training dataset is empty")
    missing = [n for n in spec.feature_names if n not in train_ds.names]
    if missing:
        raise SchemaError(f"training data lacks model features {missing}")

    raw = train_ds.X[:, [train_ds.column_index(n) for n in spec.feature_names]]
    kinds = [train_ds.kind_of(n) for n in spec.feature_names]
    mean, scale = fit_standardizer(raw, kinds)
    Z = (raw - mean) / scale
    y = train_ds.y.astype(float)

    layers = [list(layer) for layer in init_parameters(spec, derive_rng(spec.seed, "init"))]
    optimizer = AdamOptimizer(layers, cfg)
    n = len(y)
    history: List[float] = []

    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [slice(None)]
        else:
            order = derive_rng(spec.seed, "batches", epoch).permutation(n)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        batch_losses = []
        for rows in batches:
            loss, grads = loss_and_gradients(layers, Z[rows], y[rows], cfg.weight_decay)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for pair in grads for g in pair):
                raise NumericalFailure(epoch, loss)
            optimizer.step(layers, grads)
            batch_losses.append(loss)
        history.append(float(np.mean(batch_losses)))
        logger.debug(f"{spec.kind.value} epoch {epoch}: loss {history[-1]:.6f}")

    logger.info(f"Trained {spec.kind.value} on {n} rows, features {list(spec.feature_names)}: "
                f"loss {history[0]:.4f} -> {history[-1]:.4f}")
    return TrainedModel(spec=spec, layers=tuple((W, b) for W, b in layers),
                        scaler_mean=mean, scaler_scale=scale, training_log=tuple(history))


def predict_proba(model: TrainedModel, rows: Any) -> np.ndarray:
    return model.predict_proba(rows)


def predict_class(model: TrainedModel, rows: Any, threshold: float = 0.5) -> np.ndarray:
    return model.predict_class(rows, threshold)


def group_accuracy(model: TrainedModel, ds: TabularDataset, group: int) -> float:
    """Share of rows in ``group`` whose predicted class equals the label."""
    mask = ds.sensitive == group
    if not mask.any():
        raise ConfigurationError("group", f"group {group} has no rows in the dataset")
    subset = ds.subset(mask)
    return float(np.mean(model.predict_class(subset) == subset.y))


def group_accuracies(model: TrainedModel, ds: TabularDataset) -> Dict[str, float]:
    """Accuracy per group plus the advantaged-minus-disadvantaged gap."""
    acc0 = group_accuracy(model, ds, 0)
    acc1 = group_accuracy(model, ds, 1)
    return {"0": acc0, "1": acc1, "gap": acc1 - acc0}


def _batch_arrays(sample_batch: Any, feature_names: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(sample_batch, TabularDataset):
        missing = [n for n in feature_names if n not in sample_batch.names]
        if missing:
            raise SchemaError(f"batch lacks model features {missing}")
        X = sample_batch.X[:, [sample_batch.column_index(n) for n in feature_names]]
        return X, sample_batch.y.astype(float)
    X, y = sample_batch
    return np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float)


def random_parameters(spec: ModelSpec, rng: np.random.Generator, scale: float = 0.5) -> List[Layer]:
    """Dense random parameters (biases included) for gradient checks."""
    dims = spec.layer_dims
    return [(rng.normal(0.0, scale / np.sqrt(fan_in), (fan_in, fan_out)), rng.normal(0.0, scale, fan_out))
            for fan_in, fan_out in zip(dims[:-1], dims[1:])]


def gradient_check(spec: ModelSpec, sample_batch: Any, layers: Optional[Sequence[Layer]] = None,
                   weight_decay: float = 0.0, step: float = 1e-5) -> float:
    """
    Max relative error between backprop and central finite differences.

    Every parameter is perturbed by ``±step``; the relative error of each
    entry is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``.

    Args:
        spec: Architecture to check
        sample_batch: Small TabularDataset or (X, y) pair, at most 8 rows
        layers: Parameters to check at; random draws from ``spec.seed`` otherwise
        weight_decay: Coupled L2 strength included in the objective
        step: Finite-difference step

    Returns:
        The maximum relative error over all parameters
    """
    X, y = _batch_arrays(sample_batch, spec.feature_names)
    if len(y) > 8:
        raise ConfigurationError("sample_batch", f"gradient checks use at most 8 rows, got {len(y)}")
    if layers is None:
        layers = random_parameters(spec, derive_rng(spec.seed, "gradient-check"))
    params = [[np.array(W, dtype=float), np.array(b, dtype=float).reshape(-1)] for W, b in layers]

    _, grads = loss_and_gradients(params, X, y, weight_decay)
    worst = 0.0
    for k, layer in enumerate(params):
        for j, p in enumerate(layer):
            analytic = np.asarray(grads[k][j]).reshape(p.shape)
            flat = p.reshape(-1)
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + step
                up = objective(params, X, y, weight_decay)
                flat[idx] = original - step
                down = objective(params, X, y, weight_decay)
                flat[idx] = original
                numeric = (up - down) / (2.0 * step)
                a = analytic.reshape(-1)[idx]
                denom = max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, abs(a - numeric) / denom)
    return worst


def save_model(model: TrainedModel, path: Union[str, Path]) -> Path:
    """Write the model as a versioned JSON document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format": MODEL_FILE_FORMAT,
        "version": MODEL_FILE_VERSION,
        "spec": model.spec.to_dict(),
        "scaler": {"mean": model.scaler_mean.tolist(), "scale": model.scaler_scale.tolist()},
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in model.layers],
        "training_log": list(model.training_log),
    }
    with open(path, "w") as f:
        json.dump(document, f)
    logger.info(f"Model saved to {path}")
    return path


def load_model(path: Union[str, Path]) -> TrainedModel:
    """
    Read a model written by :func:`save_model`.

    Raises:
        ModelFileError: Malformed or truncated file (with byte offset)
        IncompatibleVersionError: Unsupported format version
    """
    raw = Path(path).read_bytes()
    try:
        document = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ModelFileError(f"{path}: not UTF-8 text", e.start)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path}: {e.msg}", len(e.doc[:e.pos].encode("utf-8")))

    if not isinstance(document, dict) or document.get("format") != MODEL_FILE_FORMAT:
        raise ModelFileError(f"{path}: not an {MODEL_FILE_FORMAT} file", 0)
    if document.get("version") != MODEL_FILE_VERSION:
        raise IncompatibleVersionError(document.get("version"), MODEL_FILE_VERSION)
    try:
        spec = ModelSpec(**document["spec"])
        layers = tuple((np.array(layer["W"], dtype=float), np.array(layer["b"], dtype=float))
                       for layer in document["layers"])
        return TrainedModel(spec=spec, layers=layers,
                            scaler_mean=np.array(document["scaler"]["mean"], dtype=float),
                            scaler_scale=np.array(document["scaler"]["scale"], dtype=float),
                            training_log=tuple(document.get("training_log", ())))
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"{path}: invalid model contents ({e})", len(raw))
