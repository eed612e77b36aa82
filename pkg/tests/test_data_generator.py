import numpy as np
import pytest

from core.data_generator import (
    BINARY,
    Column,
    DataGenSpec,
    Objective,
    TabularDataset,
    apply_covariate_shift,
    apply_proportion_filter,
    load_dataset,
    objective_spec,
    outcome_index,
    proportion_counts,
    sample_population,
    save_dataset,
    sidecar_path,
    split_train_test,
    step_outcome_prob,
    summary_stats,
)
from utils.errors import ConfigurationError, SamplingError, SchemaError


def test_objective_parse_accepts_numbers_and_names():
    assert Objective.parse(1) is Objective.SAMPLE_SIZE
    assert Objective.parse("2") is Objective.COVARIATE_SHIFT
    assert Objective.parse("ConceptShift") is Objective.CONCEPT_SHIFT
    assert Objective.parse("omitted-variable") is Objective.OMITTED_VARIABLE
    with pytest.raises(ConfigurationError):
        Objective.parse("nonsense")


@pytest.mark.parametrize("i, expected", [(-0.2, 0.1), (0.0, 0.9), (0.6, 0.9)])
def test_step_outcome_prob(i, expected):
    spec = objective_spec(1)
    assert step_outcome_prob(i, spec) == expected


def test_step_outcome_prob_is_two_valued_and_monotone():
    spec = objective_spec(1)
    values = step_outcome_prob(np.linspace(-5, 5, 101), spec)
    assert set(np.unique(values)) == {0.1, 0.9}
    assert np.all(np.diff(values) >= 0)


@pytest.mark.parametrize("kwargs, field", [
    ({"prob_low": 0.9, "prob_high": 0.1}, "prob_low"),
    ({"n": 5}, "n"),
    ({"beta": 1.0}, "beta"),
    ({"alpha": 1.0}, "alpha"),
    ({"prob_high": 1.0}, "prob_high"),
])
def test_invalid_spec_names_field(kwargs, field):
    with pytest.raises(ConfigurationError) as info:
        DataGenSpec(objective=Objective.SAMPLE_SIZE, **kwargs)
    assert info.value.field == field


def test_concept_shift_requires_beta():
    with pytest.raises(ConfigurationError) as info:
        DataGenSpec(objective=Objective.CONCEPT_SHIFT, outcome_coeffs=(0.5, -1.0, 1.5, -0.2))
    assert info.value.field == "beta"


def test_objective_defaults():
    concept = objective_spec("concept_shift")
    assert concept.noise_sd_L == 0.1
    assert concept.beta == -0.5
    omitted = objective_spec("omitted_variable")
    assert omitted.coef_L_on_A == 0.3
    assert omitted.alpha == 1.0


def test_population_moments():
    ds = sample_population(objective_spec(1, n=20000, seed=7))
    assert ds.names == ("A", "C", "L")
    A, C, L = ds.column("A"), ds.column("C"), ds.column("L")
    assert L[A == 1].mean() - L[A == 0].mean() == pytest.approx(0.7, abs=0.03)
    assert 0.48 <= np.mean(A == 0) <= 0.52
    assert C.std(ddof=1) == pytest.approx(1.0, abs=0.03)
    np.testing.assert_array_equal(ds.sensitive, A)


def test_concept_shift_outcome_is_balanced():
    ds = sample_population(objective_spec(3, n=20000, beta=-0.5, seed=1))
    assert 0.35 <= ds.y.mean() <= 0.65


def test_mediator_matches_structural_equation():
    spec = objective_spec(1, n=20000, seed=3)
    ds = sample_population(spec)
    A, C, L = ds.column("A"), ds.column("C"), ds.column("L")
    residual = L - 0.7 * A - 0.3 * C
    assert residual.mean() == pytest.approx(0.0, abs=3 * 0.5 / np.sqrt(spec.n))
    assert residual.std() == pytest.approx(0.5, abs=0.02)


def test_sampling_is_deterministic(obj1_spec):
    first = sample_population(obj1_spec)
    second = sample_population(obj1_spec)
    np.testing.assert_array_equal(first.X, second.X)
    np.testing.assert_array_equal(first.y, second.y)


def test_dataset_is_immutable(obj1_population):
    with pytest.raises(ValueError):
        obj1_population.X[0, 0] = 99.0


def test_dataset_rejects_non_binary_columns():
    with pytest.raises(ConfigurationError):
        TabularDataset(columns=(Column("A", BINARY),), X=np.array([[0.5]]), y=[1], sensitive=[0])
    with pytest.raises(SchemaError):
        TabularDataset(columns=(Column("A", BINARY),), X=np.array([[0.0], [1.0]]), y=[1], sensitive=[0, 1])


def test_dataset_rejects_fractional_labels():
    X = np.array([[0.0], [1.0]])
    with pytest.raises(ConfigurationError) as info:
        TabularDataset(columns=(Column("A", BINARY),), X=X, y=[0.7, 1.0], sensitive=[0, 1])
    assert info.value.field == "y"
    with pytest.raises(ConfigurationError) as info:
        TabularDataset(columns=(Column("A", BINARY),), X=X, y=[0, 1], sensitive=[0.9, 1])
    assert info.value.field == "sensitive"
    ds = TabularDataset(columns=(Column("A", BINARY),), X=X, y=[0.0, 1.0], sensitive=[True, False])
    assert ds.y.dtype == np.int64
    np.testing.assert_array_equal(ds.sensitive, [1, 0])


def test_proportion_filter_with_fixed_total():
    ds = sample_population(objective_spec(1, n=28000, seed=2))
    out = apply_proportion_filter(ds, 0.05, seed=0, total=14000)
    assert out.n_rows == 14000
    assert int(np.sum(out.sensitive == 0)) == 700


def test_proportion_filter_keeps_largest_feasible_size(obj1_population):
    counts = obj1_population.group_counts()
    out = apply_proportion_filter(obj1_population, 0.5, seed=0)
    assert out.n_rows == 2 * min(counts.values())
    assert out.group_counts() == {0: min(counts.values()), 1: min(counts.values())}


def test_proportion_filter_keeps_group_distribution():
    ds = sample_population(objective_spec(1, n=20000, seed=4))
    out = apply_proportion_filter(ds, 0.1, seed=4)
    for group in (0, 1):
        before = ds.column("L")[ds.sensitive == group]
        after = out.column("L")[out.sensitive == group]
        se = np.sqrt(before.var() / len(before) + after.var() / len(after))
        assert abs(before.mean() - after.mean()) <= 3 * se


def test_proportion_filter_errors(obj1_population):
    with pytest.raises(SamplingError) as info:
        apply_proportion_filter(obj1_population, 0.05, seed=0, total=10 ** 6)
    assert set(info.value.counts) == {0, 1}
    with pytest.raises(ConfigurationError):
        apply_proportion_filter(obj1_population, 0.6, seed=0)
    only_advantaged = obj1_population.subset(obj1_population.sensitive == 1)
    with pytest.raises(SamplingError):
        apply_proportion_filter(only_advantaged, 0.2, seed=0)


def test_proportion_counts_arithmetic():
    assert proportion_counts(7000, 14000, 0.05, total=14000) == (700, 13300)
    assert proportion_counts(7000, 7000, 0.05) == (368, 7000)
    with pytest.raises(SamplingError):
        proportion_counts(7000, 7000, 0.05, total=14000)
    with pytest.raises(SamplingError):
        proportion_counts(600, 7000, 0.05, total=14000)


def test_covariate_shift_full_overlap_is_identity(obj1_population):
    out, threshold = apply_covariate_shift(obj1_population, 1.0)
    assert out is obj1_population
    assert threshold == float("-inf")


def test_covariate_shift_truncates_disadvantaged_rows(obj1_population):
    L0 = obj1_population.column("L")[obj1_population.sensitive == 0]
    out, threshold = apply_covariate_shift(obj1_population, 0.2)
    kept0 = out.column("L")[out.sensitive == 0]
    assert threshold == pytest.approx(np.quantile(L0, 0.8))
    assert kept0.min() >= threshold
    assert not np.any((out.sensitive == 0) & (out.column("L") < threshold))
    assert out.group_counts()[1] == obj1_population.group_counts()[1]


def test_covariate_shift_changes_train_outcome_law():
    ds = sample_population(objective_spec(2, n=20000, seed=5))
    train, test = split_train_test(ds, 0.7, seed=5)
    shifted, _ = apply_covariate_shift(train, 0.2)
    p_train = shifted.y[shifted.sensitive == 0].mean()
    p_test = test.y[test.sensitive == 0].mean()
    assert abs(p_train - p_test) > 0.05


def test_covariate_shift_keeps_outcome_law_of_kept_rows():
    spec = objective_spec(2, n=60000, seed=12)
    ds = sample_population(spec)
    shifted, _ = apply_covariate_shift(ds, 0.6)
    kept = np.isin(ds.row_ids, shifted.row_ids)
    np.testing.assert_array_equal(ds.y[kept], shifted.y)

    def band_rates(d):
        i = outcome_index(spec, d.sensitive, d.column("C"), d.column("L"))
        mask0 = d.sensitive == 0
        return [d.y[mask0 & band].mean() for band in (i < 0, i >= 0)]

    np.testing.assert_allclose(band_rates(shifted), band_rates(ds), atol=0.03)
    np.testing.assert_allclose(band_rates(shifted), [0.1, 0.9], atol=0.03)


def test_covariate_shift_needs_disadvantaged_rows(obj1_population):
    with pytest.raises(SamplingError):
        apply_covariate_shift(obj1_population.subset(obj1_population.sensitive == 1), 0.5)


def test_split_sizes_and_disjointness():
    ds = sample_population(objective_spec(1, n=20000, seed=0))
    train, test = split_train_test(ds, 0.7, seed=9)
    assert (train.n_rows, test.n_rows) == (14000, 6000)
    assert not set(train.row_ids) & set(test.row_ids)
    assert sorted(np.concatenate([train.row_ids, test.row_ids])) == list(range(20000))
    again, _ = split_train_test(ds, 0.7, seed=9)
    np.testing.assert_array_equal(train.row_ids, again.row_ids)


def test_summary_stats_balanced_counts():
    ds = sample_population(objective_spec(1, n=20000, seed=8))
    stats = summary_stats(ds)
    assert list(stats.index) == [0, 1]
    assert stats["count"].sum() == 20000
    assert all(abs(c - 10000) <= 0.02 * 20000 for c in stats["count"])
    assert {"mean_C", "sd_L", "p_y1"} <= set(stats.columns)


def test_dataset_round_trip(tmp_path, obj1_population, obj1_spec):
    path = save_dataset(obj1_population, tmp_path / "obj1")
    assert path.suffix == ".csv"
    assert sidecar_path(path).exists()
    with open(path) as f:
        assert f.readline().strip() == "A,C,L,Y"
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.X, obj1_population.X)
    np.testing.assert_array_equal(loaded.y, obj1_population.y)
    assert loaded.provenance == obj1_spec


def test_load_dataset_requires_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A,C,Y\n0,0.1,1\n")
    with pytest.raises(SchemaError):
        load_dataset(path)
