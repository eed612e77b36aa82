"""
Group fidelity-gap metrics.

Given one quality value Q per explained instance (hard-label agreement or
residual error) and the instance's group, two disparity measures are
computed:

    max gap   max_j (pooled mean Q - mean Q of group j)
    mean gap  average |Q_p - Q_j| over all unordered group pairs
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.stats

from core.lime_explainer import LocalExplanation, agreement
from utils.errors import ConfigurationError, MetricError
from utils.seeding import derive_rng
from utils.validators import check_choice, check_fraction, check_int_at_least

logger = logging.getLogger(__name__)

CI_METHODS = ("none", "bootstrap")


class QKind(Enum):
    """Per-instance fidelity quality measures."""
    ACCURACY = "accuracy"
    RESIDUAL_ERROR = "residual_error"

    @classmethod
    def parse(cls, value) -> "QKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"accuracy": cls.ACCURACY, "acc": cls.ACCURACY,
                   "residualerror": cls.RESIDUAL_ERROR, "residual": cls.RESIDUAL_ERROR}
        if key in aliases:
            return aliases[key]
        raise ConfigurationError("q_kind", f"unknown fidelity measure {value!r}")


@dataclass(frozen=True)
class FidelityRecord:
    instance_id: int
    group: int
    q_value: float

    def __post_init__(self):
        if not np.isfinite(self.q_value):
            raise MetricError(f"record {self.instance_id}: q_value must be finite, got {self.q_value!r}")


def _group_arrays(records: Sequence[FidelityRecord],
                  n_groups: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    q = np.array([r.q_value for r in records], dtype=float)
    g = np.array([r.group for r in records], dtype=np.int64)
    if len(g) and g.min() < 0:
        raise MetricError("group ids must be non-negative")
    G = n_groups if n_groups is not None else (int(g.max()) + 1 if len(g) else 0)
    sizes = {j: int(np.sum(g == j)) for j in range(G)}
    if G < 2:
        raise MetricError("fidelity gaps need at least two groups", sizes)
    if any(n == 0 for n in sizes.values()) or (len(g) and g.max() >= G):
        raise MetricError("every group must be non-empty and ids contiguous", sizes)
    return q, g, G


def group_means(records: Sequence[FidelityRecord], n_groups: Optional[int] = None) -> np.ndarray:
    """Mean Q per group, indexed by group id."""
    q, g, G = _group_arrays(records, n_groups)
    return np.bincount(g, weights=q, minlength=G) / np.bincount(g, minlength=G)


def max_fidelity_gap(records: Sequence[FidelityRecord],
                     n_groups: Optional[int] = None) -> Tuple[float, int]:
    """
    Largest shortfall of a group's mean Q below the pooled mean.

    Returns:
        (gap, id of the group attaining it)
    """
    q, _, _ = _group_arrays(records, n_groups)
    shortfall = q.mean() - group_means(records, n_groups)
    worst = int(np.argmax(shortfall))
    return max(float(shortfall[worst]), 0.0), worst


def mean_fidelity_gap(records: Sequence[FidelityRecord], n_groups: Optional[int] = None) -> float:
    """Average absolute difference of group means over all group pairs."""
    means = group_means(records, n_groups)
    G = len(means)
    diffs = np.abs(means[:, None] - means[None, :])
    return float(diffs[np.triu_indices(G, k=1)].sum() * 2.0 / (G * (G - 1)))


def fidelity_from_explanations(expls: Iterable[LocalExplanation],
                               q_kind="accuracy") -> List[FidelityRecord]:
    """Turn explanations into records: agreement or |f(x) - g(x)| at the instance."""
    kind = QKind.parse(q_kind)
    records = []
    for e in expls:
        if e.group is None:
            raise MetricError(f"explanation {e.instance_id} has no group")
        if kind is QKind.ACCURACY:
            q = float(agreement(e))
        else:
            q = abs(e.blackbox_prob - e.surrogate_prob_at_instance)
        records.append(FidelityRecord(e.instance_id, e.group, q))
    return records


def fidelity_from_frame(frame: pd.DataFrame, q_kind="accuracy") -> List[FidelityRecord]:
    """Records from an explanation dump (see ``explanations_to_frame``)."""
    kind = QKind.parse(q_kind)
    missing = {"instance_id", "group", "blackbox_prob", "surrogate_prob", "agreement"} - set(frame.columns)
    if missing:
        raise MetricError(f"explanation frame lacks columns {sorted(missing)}")
    if kind is QKind.ACCURACY:
        q = frame["agreement"].to_numpy(dtype=float)
    else:
        q = np.abs(frame["blackbox_prob"].to_numpy(dtype=float) - frame["surrogate_prob"].to_numpy(dtype=float))
    return [FidelityRecord(int(i), int(g), float(v))
            for i, g, v in zip(frame["instance_id"], frame["group"], q)]


def trial_ci(values: Sequence[float], level: float = 0.95) -> Tuple[float, float]:
    """Student-t interval for the mean of per-trial statistics."""
    check_fraction("level", level, high=1.0, high_inclusive=False)
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise MetricError(f"a confidence interval needs at least 2 trials, got {len(values)}")
    if np.ptp(values) == 0:
        return float(values[0]), float(values[0])
    mean = float(values.mean())
    sem = float(values.std(ddof=1) / np.sqrt(len(values)))
    low, high = scipy.stats.t.interval(level, len(values) - 1, loc=mean, scale=sem)
    return float(low), float(high)


def bootstrap_ci(records: Sequence[FidelityRecord], statistic: str = "mean_gap",
                 level: float = 0.95, n_resamples: int = 1000, seed: int = 0,
                 n_groups: Optional[int] = None) -> Tuple[float, float]:
    """
    Percentile-bootstrap interval over instances within one trial.

    ``statistic`` is one of ``mean_gap``, ``max_gap`` or ``overall_Q``.
    Resamples that leave a group empty yield NaN and widen nothing.
    """
    check_choice("statistic", statistic, ("mean_gap", "max_gap", "overall_Q"))
    check_int_at_least("n_resamples", n_resamples, 1)
    q, g, G = _group_arrays(records, n_groups)

    def stat(q_sample, g_sample):
        g_sample = np.asarray(g_sample).astype(np.int64)
        if statistic == "overall_Q":
            return float(np.mean(q_sample))
        counts = np.bincount(g_sample, minlength=G)
        if np.any(counts == 0):
            return np.nan
        means = np.bincount(g_sample, weights=q_sample, minlength=G) / counts
        if statistic == "max_gap":
            return float(np.max(np.mean(q_sample) - means))
        diffs = np.abs(means[:, None] - means[None, :])
        return float(diffs[np.triu_indices(G, k=1)].sum() * 2.0 / (G * (G - 1)))

    result = scipy.stats.bootstrap(
        (q, g), stat, paired=True, vectorized=False, n_resamples=n_resamples,
        confidence_level=level, method="percentile", random_state=derive_rng(seed, "bootstrap"),
    )
    return float(result.confidence_interval.low), float(result.confidence_interval.high)


def brute_force_gap_oracle(records: Sequence[FidelityRecord]) -> Tuple[float, float]:
    """
    Recompute both gaps by plain enumeration.

    Shares no code with the vectorized metrics; used as a test oracle.
    """
    groups = sorted({r.group for r in records})
    total = 0.0
    for r in records:
        total += r.q_value
    pooled = total / len(records)

    means = {}
    for j in groups:
        s, n = 0.0, 0
        for r in records:
            if r.group == j:
                s += r.q_value
                n += 1
        means[j] = s / n

    max_gap = max(pooled - means[j] for j in groups)
    pairs = list(itertools.combinations(groups, 2))
    mean_gap = sum(abs(means[p] - means[j]) for p, j in pairs) / len(pairs)
    return max_gap, mean_gap


@dataclass
class FidelityReport:
    """Fidelity summary for one explained test set."""
    q_kind: QKind
    per_group_Q: Dict[int, float]
    overall_Q: float
    max_gap: float
    max_gap_group: int
    mean_gap: float
    n_per_group: Dict[int, int]
    ci: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """Rows of (metric, q_kind, group_or_all, value, ci_low, ci_high)."""
        nan = (float("nan"), float("nan"))
        rows = [("max_gap", "all", self.max_gap), ("mean_gap", "all", self.mean_gap),
                ("overall_Q", "all", self.overall_Q)]
        rows += [("group_Q", str(j), v) for j, v in sorted(self.per_group_Q.items())]
        return pd.DataFrame(
            [{"metric": m, "q_kind": self.q_kind.value, "group_or_all": grp, "value": v,
              "ci_low": self.ci.get(m, nan)[0] if grp == "all" else nan[0],
              "ci_high": self.ci.get(m, nan)[1] if grp == "all" else nan[1]}
             for m, grp, v in rows]
        )


def build_report(records: Sequence[FidelityRecord], q_kind="accuracy", ci_method: str = "none",
                 level: float = 0.95, n_resamples: int = 1000, seed: int = 0,
                 n_groups: Optional[int] = None) -> FidelityReport:
    """
    Assemble per-group Q, pooled Q and both gaps for one set of records.

    With ``ci_method="bootstrap"`` each whole-population statistic gets a
    percentile interval over resampled instances.
    """
    check_choice("ci_method", ci_method, CI_METHODS)
    kind = QKind.parse(q_kind)
    q, g, G = _group_arrays(records, n_groups)
    means = group_means(records, G)
    max_gap, worst = max_fidelity_gap(records, G)
    report = FidelityReport(
        q_kind=kind,
        per_group_Q={j: float(means[j]) for j in range(G)},
        overall_Q=float(q.mean()),
        max_gap=max_gap,
        max_gap_group=worst,
        mean_gap=mean_fidelity_gap(records, G),
        n_per_group={j: int(np.sum(g == j)) for j in range(G)},
    )
    if ci_method == "bootstrap":
        for statistic in ("max_gap", "mean_gap", "overall_Q"):
            report.ci[statistic] = bootstrap_ci(records, statistic, level, n_resamples, seed, G)
    logger.debug(f"Fidelity ({kind.value}): overall {report.overall_Q:.4f}, "
                 f"max gap {report.max_gap:.4f}, mean gap {report.mean_gap:.4f}")
    return report
