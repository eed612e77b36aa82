import logging
import os

import numpy as np
import pandas as pd
import pytest
import scipy.special

from conftest import write_adult_files
from core.adult_loader import (
    ADULT_CATEGORIES,
    EXPECTED_ROWS,
    AdultConfig,
    Balanced5050,
    DropColumns,
    FullTraining,
    GroupFraction,
    HoursCap,
    Proportion,
    build_scenario,
    concept_shift_test,
    decode_row,
    load_raw,
    preprocess,
    scenario_label,
)
from core.data_generator import objective_spec, sample_population
from utils.errors import ConfigurationError, DataIntegrityError, SamplingError, SchemaError


@pytest.fixture
def raw(adult_config):
    return load_raw(adult_config)


@pytest.fixture
def encoded(raw, adult_config):
    return preprocess(raw, adult_config)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        AdultConfig.from_dir(tmp_path, excluded_columns={"income"})
    with pytest.raises(ConfigurationError):
        AdultConfig.from_dir(tmp_path, excluded_columns={"salary"})
    with pytest.raises(ConfigurationError):
        AdultConfig.from_dir(tmp_path, disadvantaged_value="Other")


def test_data_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ADULT_DATA_DIR", str(tmp_path / "elsewhere"))
    cfg = AdultConfig.from_dir("ignored")
    assert cfg.data_paths[0] == tmp_path / "elsewhere" / "adult.data"


def test_missing_files(tmp_path, monkeypatch):
    monkeypatch.delenv("ADULT_DATA_DIR", raising=False)
    with pytest.raises(FileNotFoundError):
        load_raw(AdultConfig.from_dir(tmp_path / "nowhere"))


def test_load_raw_parses_both_files(raw):
    assert len(raw) == 900
    assert set(raw["income"]) <= {"<=50K", ">50K"}
    assert list(raw["source"].unique()) == ["train", "test"]
    assert raw["workclass"].isna().sum() == 3
    assert raw.loc[raw["source"] == "test", "line"].iloc[0] == 2


def test_unexpected_row_count_is_logged(adult_config, caplog):
    with caplog.at_level(logging.WARNING, logger="core.adult_loader"):
        load_raw(adult_config)
    assert str(EXPECTED_ROWS) in caplog.text


def test_short_row_reports_line(adult_dir, adult_config):
    lines = (adult_dir / "adult.data").read_text().splitlines()
    lines[4] = ", ".join(lines[4].split(", ")[:13])
    (adult_dir / "adult.data").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataIntegrityError) as info:
        load_raw(adult_config)
    assert info.value.line == 5


def test_unknown_label_reports_line(adult_dir, adult_config):
    lines = (adult_dir / "adult.test").read_text().splitlines()
    lines[2] = lines[2].rsplit(", ", 1)[0] + ", maybe."
    (adult_dir / "adult.test").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataIntegrityError) as info:
        load_raw(adult_config)
    assert info.value.line == 3


def test_preprocess_encoding(encoded):
    ds = encoded.dataset
    assert ds.n_rows == 897
    assert "fnlwgt" not in ds.names and "education" not in ds.names
    for block in encoded.blocks:
        sums = ds.X[:, [ds.column_index(c) for c in block]].sum(axis=1)
        np.testing.assert_array_equal(sums, 1.0)
    assert encoded.encoding["sex"] == ("sex",)
    assert len(encoded.encoding["native-country"]) == len(ADULT_CATEGORIES["native-country"])
    np.testing.assert_array_equal(ds.column("sex"), ds.sensitive)
    age = ds.column("age")
    assert age.mean() == pytest.approx(0.0, abs=1e-12)
    assert age.std() == pytest.approx(1.0)


def test_sensitive_coding(raw, encoded):
    kept = raw.loc[~raw.isna().any(axis=1)].reset_index(drop=True)
    np.testing.assert_array_equal(encoded.dataset.sensitive, (kept["sex"] == "Female").astype(int))


def test_scaling_uses_fit_rows_only(raw, adult_config):
    fit_mask = (raw["source"] == "train").to_numpy()
    enc = preprocess(raw, adult_config, fit_mask=fit_mask)
    train_rows = enc.source == "train"
    hours = enc.dataset.column("hours-per-week")
    assert hours[train_rows].mean() == pytest.approx(0.0, abs=1e-12)
    assert hours[~train_rows].mean() != pytest.approx(0.0, abs=1e-12)


def test_unknown_category(raw, adult_config):
    bad = raw.copy()
    bad.loc[10, "race"] = "Martian"
    with pytest.raises(SchemaError):
        preprocess(bad, adult_config)


def test_missing_values_without_dropping(raw, adult_dir):
    cfg = AdultConfig.from_dir(adult_dir, drop_missing=False)
    with pytest.raises(DataIntegrityError) as info:
        preprocess(raw, cfg)
    assert info.value.line == 1


def test_sex_can_be_excluded_from_features(raw, adult_dir):
    cfg = AdultConfig.from_dir(adult_dir, excluded_columns={"fnlwgt", "education", "sex"})
    enc = preprocess(raw, cfg)
    assert "sex" not in enc.dataset.names
    assert set(np.unique(enc.dataset.sensitive)) == {0, 1}


def test_decode_row(raw, encoded):
    source = raw.iloc[3]
    decoded = decode_row(encoded, 0)
    assert decoded["age"] == pytest.approx(float(source["age"]))
    assert decoded["hours-per-week"] == pytest.approx(float(source["hours-per-week"]))
    for col in ("sex", "race", "native-country", "occupation"):
        assert decoded[col] == source[col]


@pytest.mark.oracle
def test_concept_shift_test_matches_statsmodels(encoded):
    sm = pytest.importorskip("statsmodels.api")
    ds = encoded.dataset
    result = concept_shift_test(ds)
    s, x = ds.sensitive.astype(float), ds.column("hours-per-week")
    reference = sm.Logit(ds.y, np.column_stack([np.ones_like(x), s, x, s * x])).fit(disp=0)
    np.testing.assert_allclose(result.coefficients, reference.params, rtol=1e-6)
    np.testing.assert_allclose(result.std_errors, reference.bse, rtol=1e-6)
    assert result.p_value == pytest.approx(reference.pvalues[3], rel=1e-5)


def test_concept_shift_detected_in_synthetic_data():
    ds = sample_population(objective_spec(3, n=20000, seed=0))
    assert concept_shift_test(ds, covariate="L").p_value <= 0.01


@pytest.mark.oracle
def test_interaction_test_rejection_rate_without_interaction():
    rejections = 0
    for replicate in range(200):
        rng = np.random.default_rng(5000 + replicate)
        s = (rng.random(400) < 0.5).astype(float)
        x = rng.normal(size=400)
        y = (rng.random(400) < scipy.special.expit(-0.3 + 0.5 * s + 0.8 * x)).astype(int)
        frame = pd.DataFrame({"sex": s, "hours-per-week": x, "income": y})
        rejections += concept_shift_test(frame).p_value <= 0.1
    assert 0.04 <= rejections / 200 <= 0.17


def test_concept_shift_test_on_frame():
    ds = sample_population(objective_spec(1, n=4000, seed=1))
    frame = ds.to_frame()
    result = concept_shift_test(frame, covariate="L", sensitive_column="A", label_column="Y")
    assert result.iterations >= 1
    assert 0.0 <= result.p_value <= 1.0
    with pytest.raises(SchemaError):
        concept_shift_test(frame.drop(columns="Y"), covariate="L", sensitive_column="A", label_column="Y")


def test_hours_cap(encoded):
    out = build_scenario(encoded, encoded.dataset, HoursCap(20))
    mean, sd = encoded.scaler["hours-per-week"]
    raw_hours = out.column("hours-per-week") * sd + mean
    assert np.all(raw_hours[out.sensitive == 0] < 20 - 1e-9)
    assert out.group_counts()[1] == encoded.dataset.group_counts()[1]
    with pytest.raises(SamplingError):
        build_scenario(encoded, encoded.dataset, HoursCap(0))


def test_balanced_scenario(encoded):
    out = build_scenario(encoded, encoded.dataset, Balanced5050(), seed=3)
    counts = out.group_counts()
    assert counts[0] == counts[1] == min(encoded.dataset.group_counts().values())


def test_proportion_scenario(encoded):
    out = build_scenario(encoded, encoded.dataset, Proportion(0.2), seed=1)
    assert np.mean(out.sensitive == 0) == pytest.approx(0.2, abs=0.01)
    again = build_scenario(encoded, encoded.dataset, Proportion(0.2), seed=1)
    np.testing.assert_array_equal(out.row_ids, again.row_ids)
    with pytest.raises(SamplingError):
        build_scenario(encoded, encoded.dataset, Proportion(0.5, total=10 ** 6))


def test_group_fraction_scenario(encoded):
    before = encoded.dataset.group_counts()
    out = build_scenario(encoded, encoded.dataset, GroupFraction(0.5))
    assert out.group_counts()[1] == round(0.5 * before[1])
    assert out.group_counts()[0] == before[0]


def test_drop_columns_scenario(encoded):
    width = len(encoded.dataset.names)
    out = build_scenario(encoded, encoded.dataset, DropColumns({"native-country"}))
    assert len(out.names) == width - len(ADULT_CATEGORIES["native-country"])
    assert not any(name.startswith("native-country=") for name in out.names)
    with pytest.raises(SchemaError):
        build_scenario(encoded, encoded.dataset, DropColumns({"fnlwgt"}))


def test_full_training_is_untouched(encoded):
    assert build_scenario(encoded, encoded.dataset, FullTraining()) is encoded.dataset


def test_scenario_labels():
    assert scenario_label(Proportion(0.1)) == ("p_disadv", 0.1)
    assert scenario_label(DropColumns({"race", "age"})) == ("dropped", "age+race")
    assert scenario_label(FullTraining()) == ("full", 1.0)


def test_regenerated_files_are_deterministic(tmp_path):
    first = write_adult_files(tmp_path / "a", seed=5)
    second = write_adult_files(tmp_path / "b", seed=5)
    assert (first / "adult.data").read_text() == (second / "adult.data").read_text()


@pytest.mark.adult
@pytest.mark.skipif(not os.environ.get("ADULT_DATA_DIR"), reason="ADULT_DATA_DIR not set")
def test_real_adult_files():
    cfg = AdultConfig.from_dir()
    raw = load_raw(cfg)
    assert len(raw) == EXPECTED_ROWS
    enc = preprocess(raw, cfg)
    assert enc.dataset.n_rows == 45222
