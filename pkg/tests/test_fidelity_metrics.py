import numpy as np
import pandas as pd
import pytest

from core.fidelity_metrics import (
    FidelityRecord,
    QKind,
    bootstrap_ci,
    brute_force_gap_oracle,
    build_report,
    fidelity_from_explanations,
    fidelity_from_frame,
    group_means,
    max_fidelity_gap,
    mean_fidelity_gap,
    trial_ci,
)
from core.lime_explainer import LocalExplanation
from utils.errors import ConfigurationError, MetricError
from utils.seeding import derive_rng


def _records(groups):
    """Records from {group: [q, ...]}."""
    out, k = [], 0
    for group, values in groups.items():
        for q in values:
            out.append(FidelityRecord(k, group, float(q)))
            k += 1
    return out


def test_q_kind_parse():
    assert QKind.parse("accuracy") is QKind.ACCURACY
    assert QKind.parse("residual-error") is QKind.RESIDUAL_ERROR
    with pytest.raises(ConfigurationError):
        QKind.parse("auc")


def test_two_group_gaps():
    records = _records({0: [1, 0], 1: [1, 1]})
    np.testing.assert_allclose(group_means(records), [0.5, 1.0])
    assert max_fidelity_gap(records) == (pytest.approx(0.25), 0)
    assert mean_fidelity_gap(records) == pytest.approx(0.5)


def test_three_group_gaps():
    records = _records({0: [1, 1], 1: [1, 0], 2: [1, 1, 1, 0]})
    gap, worst = max_fidelity_gap(records)
    pooled = 6 / 8
    assert gap == pytest.approx(pooled - 0.5)
    assert worst == 1
    assert mean_fidelity_gap(records) == pytest.approx((0.5 + 0.25 + 0.25) / 3)


def test_equal_groups_have_no_gap():
    records = _records({0: [1, 0, 1], 1: [0, 1, 1]})
    assert max_fidelity_gap(records)[0] == pytest.approx(0.0, abs=1e-15)
    assert mean_fidelity_gap(records) == pytest.approx(0.0, abs=1e-15)


def test_gaps_are_label_permutation_invariant():
    a = _records({0: [1, 0, 0], 1: [1, 1], 2: [0, 1]})
    b = _records({2: [1, 0, 0], 0: [1, 1], 1: [0, 1]})
    assert max_fidelity_gap(a)[0] == pytest.approx(max_fidelity_gap(b)[0])
    assert mean_fidelity_gap(a) == pytest.approx(mean_fidelity_gap(b))


def test_empty_group_is_an_error():
    records = _records({0: [1, 1], 2: [0, 1]})
    with pytest.raises(MetricError) as info:
        max_fidelity_gap(records)
    assert info.value.group_sizes[1] == 0
    with pytest.raises(MetricError):
        mean_fidelity_gap(_records({0: [1, 1]}), n_groups=2)
    with pytest.raises(MetricError):
        group_means(_records({0: [1.0]}))


def test_records_must_be_finite():
    with pytest.raises(MetricError):
        FidelityRecord(0, 0, float("nan"))


def test_residual_error_records():
    expls = [LocalExplanation(3, {}, 0.0, surrogate_prob_at_instance=0.6, blackbox_prob=0.8, group=0),
             LocalExplanation(4, {}, 0.0, surrogate_prob_at_instance=0.6, blackbox_prob=0.4, group=1)]
    residual = fidelity_from_explanations(expls, "residual_error")
    assert [r.q_value for r in residual] == [pytest.approx(0.2), pytest.approx(0.2)]
    accuracy = fidelity_from_explanations(expls)
    assert [(r.instance_id, r.group, r.q_value) for r in accuracy] == [(3, 0, 1.0), (4, 1, 0.0)]
    with pytest.raises(MetricError):
        fidelity_from_explanations([LocalExplanation(0, {}, 0.0, 0.5, 0.5)])


def test_records_from_explanation_frame():
    frame = pd.DataFrame({"instance_id": [1, 2, 3], "group": [0, 1, 1], "blackbox_prob": [0.9, 0.2, 0.7],
                          "surrogate_prob": [0.8, 0.6, 0.65], "agreement": [1, 0, 1]})
    assert [r.q_value for r in fidelity_from_frame(frame)] == [1.0, 0.0, 1.0]
    residual = fidelity_from_frame(frame, QKind.RESIDUAL_ERROR)
    np.testing.assert_allclose([r.q_value for r in residual], [0.1, 0.4, 0.05])
    with pytest.raises(MetricError):
        fidelity_from_frame(frame.drop(columns="agreement"))


def test_trial_ci():
    low, high = trial_ci([0.1, 0.2, 0.3])
    assert low < 0.2 < high
    assert (high - low) / 2 == pytest.approx(4.303 * 0.1 / np.sqrt(3), rel=1e-3)
    assert trial_ci([0.4, 0.4, 0.4]) == (0.4, 0.4)
    assert trial_ci([0.1] * 5) == (0.1, 0.1)
    with pytest.raises(MetricError):
        trial_ci([0.5])


def test_bootstrap_ci_covers_point_estimate():
    rng = np.random.default_rng(0)
    records = _records({0: (rng.random(200) < 0.7).astype(float), 1: (rng.random(200) < 0.9).astype(float)})
    estimate = mean_fidelity_gap(records)
    low, high = bootstrap_ci(records, "mean_gap", n_resamples=500, seed=1)
    assert low <= estimate <= high
    assert bootstrap_ci(records, "mean_gap", n_resamples=500, seed=1) == (low, high)
    overall = bootstrap_ci(records, "overall_Q", n_resamples=500, seed=1)
    assert overall[0] < overall[1]
    with pytest.raises(ConfigurationError):
        bootstrap_ci(records, "median_gap")


def test_bootstrap_ci_three_groups_max_gap():
    rng = np.random.default_rng(3)
    records = _records({g: (rng.random(150) < p).astype(float) for g, p in enumerate((0.6, 0.8, 0.9))})
    estimate = max_fidelity_gap(records)[0]
    low, high = bootstrap_ci(records, "max_gap", n_resamples=300, seed=2)
    assert np.isfinite([low, high]).all()
    assert low <= estimate <= high


def test_build_report():
    records = _records({0: [1, 0, 1, 0], 1: [1, 1, 1, 0]})
    report = build_report(records, "accuracy")
    assert report.per_group_Q == {0: 0.5, 1: 0.75}
    assert report.overall_Q == pytest.approx(0.625)
    assert report.max_gap == pytest.approx(0.125)
    assert report.max_gap_group == 0
    assert report.n_per_group == {0: 4, 1: 4}
    assert report.ci == {}
    frame = report.to_frame()
    assert list(frame.columns) == ["metric", "q_kind", "group_or_all", "value", "ci_low", "ci_high"]
    assert list(frame["metric"]) == ["max_gap", "mean_gap", "overall_Q", "group_Q", "group_Q"]
    assert frame["ci_low"].isna().all()


def test_build_report_with_bootstrap():
    rng = np.random.default_rng(2)
    records = _records({0: rng.random(60), 1: rng.random(60)})
    report = build_report(records, "residual_error", ci_method="bootstrap", n_resamples=200)
    assert set(report.ci) == {"max_gap", "mean_gap", "overall_Q"}
    frame = report.to_frame()
    assert frame.loc[frame["metric"] == "overall_Q", "ci_low"].notna().all()
    with pytest.raises(ConfigurationError):
        build_report(records, ci_method="jackknife")


@pytest.mark.oracle
@pytest.mark.parametrize("draw", range(100))
def test_gaps_match_brute_force(draw):
    rng = derive_rng(draw, "test-gap-oracle")
    n_groups = int(rng.integers(2, 6))
    groups = np.concatenate([np.arange(n_groups), rng.integers(0, n_groups, size=int(rng.integers(0, 40)))])
    values = rng.random(len(groups)) if draw % 2 else (rng.random(len(groups)) < 0.7).astype(float)
    records = [FidelityRecord(k, int(g), float(q)) for k, (g, q) in enumerate(zip(groups, values))]
    expected_max, expected_mean = brute_force_gap_oracle(records)
    assert max_fidelity_gap(records)[0] == pytest.approx(expected_max, abs=1e-12)
    assert mean_fidelity_gap(records) == pytest.approx(expected_mean, abs=1e-12)
