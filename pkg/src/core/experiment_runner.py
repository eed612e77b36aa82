"""
Experiment orchestration: sweeps, trials and model variants.

A plan is a grid of sweep values (or Adult scenarios) crossed with model
variants and trials. For each (grid point, trial) the data is generated,
split 70/30 and restricted once; every variant then trains a black box,
explains a capped per-group sample of the test split and emits fidelity
and black-box accuracy rows.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.adult_loader import (
    ADULT_COLUMNS,
    AdultConfig,
    Balanced5050,
    EncodedDataset,
    FullTraining,
    GroupFraction,
    HoursCap,
    Proportion,
    Scenario,
    build_scenario,
    concept_shift_test,
    load_raw,
    preprocess,
    scenario_label,
)
from core.blackbox import DEFAULT_HIDDEN_DIMS, ModelSpec, TrainConfig, group_accuracies, train
from core.data_generator import (
    DataGenSpec,
    Objective,
    TabularDataset,
    apply_covariate_shift,
    apply_proportion_filter,
    objective_spec,
    sample_population,
    split_indices,
    split_train_test,
)
from core.fidelity_metrics import QKind, build_report, fidelity_from_explanations, trial_ci
from core.lime_explainer import ExplainerConfig, FeatureScaler, explain_batch, explanations_to_frame
from utils.errors import ConfigurationError, FitError, MetricError
from utils.seeding import derive_rng, derive_seed
from utils.validators import check_choice, check_fraction, check_int_at_least

logger = logging.getLogger(__name__)

SENSITIVE_VARIANTS = ("LR_A", "LR_noA", "MLP_A", "MLP_noA")
OMITTED_VARIANTS = ("LR_C", "LR_noC", "MLP_C", "MLP_noC")
ADULT_GENDER_OMISSIONS = ("LR_noA", "MLP_noA", "LR_noA_noC", "MLP_noA_noC")

PROPORTION_GRID = tuple(round(0.05 * k, 2) for k in range(1, 11))
OVERLAP_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
BETA_GRID = (1.5, 0.5, -0.5)
ALPHA_GRID = (0.0, 0.5, 1.0, 1.5)
HOURS_GRID = (100, 80, 60, 40, 20)
FEMALE_FRACTION_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))

SWEEPS = {
    Objective.SAMPLE_SIZE: ("p_disadv", PROPORTION_GRID),
    Objective.COVARIATE_SHIFT: ("overlap", OVERLAP_GRID),
    Objective.CONCEPT_SHIFT: ("beta", BETA_GRID),
    Objective.OMITTED_VARIABLE: ("alpha", ALPHA_GRID),
}
ADULT_SCENARIOS = ("proportion", "hours", "concept", "omitted")
BLACKBOX_Q = "blackbox"
SUMMARY_CI_METHODS = ("t", "bootstrap")


@dataclass(frozen=True)
class ExperimentPlan:
    """
    Everything needed to reproduce one sweep.

    ``objective`` is an Objective value for synthetic sweeps or
    ``adult_<scenario>`` for Adult plans, whose grid holds Scenario objects.
    """
    objective: str
    sweep_param: str
    grid: Tuple[Any, ...]
    variants: Tuple[str, ...]
    trials: int = 5
    base_seed: int = 0
    data_spec: Optional[DataGenSpec] = None
    adult: Optional[AdultConfig] = None
    train_config: TrainConfig = TrainConfig()
    explainer: ExplainerConfig = ExplainerConfig()
    max_explained_per_group: Optional[int] = 500
    train_fraction: float = 0.7
    q_kinds: Tuple[str, ...] = ("accuracy", "residual_error")
    hidden_dims: Tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    ci_method: str = "t"
    bootstrap_resamples: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "q_kinds", tuple(QKind.parse(q).value for q in self.q_kinds))
        self.validate()

    @property
    def is_adult(self) -> bool:
        return self.adult is not None

    def validate(self) -> None:
        if not self.grid:
            raise ConfigurationError("grid", "sweep grid is empty")
        if not self.variants:
            raise ConfigurationError("variants", "no model variants selected")
        if not self.q_kinds:
            raise ConfigurationError("q_kinds", "no fidelity measures selected")
        check_int_at_least("trials", self.trials, 1)
        check_int_at_least("base_seed", self.base_seed, 0)
        check_fraction("train_fraction", self.train_fraction, high=1.0, high_inclusive=False)
        check_choice("ci_method", self.ci_method, SUMMARY_CI_METHODS)
        if self.max_explained_per_group is not None:
            check_int_at_least("max_explained_per_group", self.max_explained_per_group, 1)
        for variant in self.variants:
            ModelSpec.for_variant(variant, ("A", "C", "L"))
        if self.is_adult:
            if not all(isinstance(s, (Proportion, GroupFraction, HoursCap, Balanced5050, FullTraining))
                       for s in self.grid):
                raise ConfigurationError("grid", "Adult plans take scenario objects")
        elif self.data_spec is None:
            raise ConfigurationError("data_spec", "synthetic plans need a data-generating spec")

    def point_label(self, point: Any) -> Tuple[str, Any]:
        return scenario_label(point) if self.is_adult else (self.sweep_param, point)

    @property
    def n_runs(self) -> int:
        return len(self.grid) * len(self.variants) * self.trials


@dataclass(frozen=True)
class ResultRow:
    run_id: str
    objective: str
    model_variant: str
    sweep_param: str
    sweep_value: Any
    trial: int
    seed: int
    q_kind: str
    metric: str
    group_or_all: str
    value: float

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class FailureRecord:
    run_id: str
    trial: int
    stage: str
    error: str


def run_id_for(objective: str, variant: str, param: str, value: Any) -> str:
    return f"{objective}|{variant}|{param}={value}"


@dataclass
class PreparedData:
    """Train/test data shared by every variant of one (grid point, trial)."""
    train: TabularDataset
    test: TabularDataset
    explain: TabularDataset
    sensitive_columns: Tuple[str, ...] = ("A",)
    omitted_columns: Tuple[str, ...] = ("C",)
    blocks: Tuple[Tuple[str, ...], ...] = ()


def objective_defaults(objective: Union[str, Objective], **overrides) -> ExperimentPlan:
    """
    Default sweep for a synthetic objective with n = 20000.

    Keyword overrides replace ExperimentPlan fields; ``n`` and ``seed`` style
    data settings go through ``data_spec``.
    """
    objective = Objective.parse(objective)
    param, grid = SWEEPS[objective]
    variants = OMITTED_VARIANTS if objective is Objective.OMITTED_VARIABLE else SENSITIVE_VARIANTS
    params: Dict[str, Any] = dict(
        objective=objective.value,
        sweep_param=param,
        grid=grid,
        variants=variants,
        data_spec=objective_spec(objective, n=20000),
    )
    params.update(overrides)
    return ExperimentPlan(**params)


def adult_plan(scenario: str, adult: AdultConfig, sweep: str = "disadvantaged_share",
               include_gender_omissions: bool = False, **overrides) -> ExperimentPlan:
    """
    Plan for one Adult experiment.

    ``proportion`` sweeps the male share 5-50% (or, with
    ``sweep="advantaged_fraction"``, keeps 10-100% of female rows);
    ``hours`` caps male working hours; ``concept`` balances the groups;
    ``omitted`` toggles the nationality block.

    Raises:
        FileNotFoundError: An Adult data file is missing
    """
    check_choice("scenario", scenario, ADULT_SCENARIOS)
    for path in adult.data_paths:
        if not Path(path).exists():
            raise FileNotFoundError(f"Adult data file not found: {path}")
    variants = SENSITIVE_VARIANTS
    if scenario == "proportion":
        check_choice("sweep", sweep, ("disadvantaged_share", "advantaged_fraction"))
        if sweep == "disadvantaged_share":
            grid, param = tuple(Proportion(p) for p in PROPORTION_GRID), "p_disadv"
        else:
            grid, param = tuple(GroupFraction(f, group=1) for f in FEMALE_FRACTION_GRID), "group_fraction"
    elif scenario == "hours":
        grid, param = tuple(HoursCap(h) for h in HOURS_GRID), "hours_cap"
    elif scenario == "concept":
        grid, param = (Balanced5050(),), "balanced"
    else:
        grid, param = (FullTraining(),), "full"
        variants = OMITTED_VARIANTS + (ADULT_GENDER_OMISSIONS if include_gender_omissions else ())
    params: Dict[str, Any] = dict(objective=f"adult_{scenario}", sweep_param=param, grid=grid,
                                  variants=variants, adult=adult)
    params.update(overrides)
    return ExperimentPlan(**params)


def sample_explained(test: TabularDataset, cap: Optional[int], seed: int) -> TabularDataset:
    """Uniform per-group sample of at most ``cap`` test rows."""
    keep = []
    for group in (0, 1):
        idx = np.flatnonzero(test.sensitive == group)
        if cap is not None and len(idx) > cap:
            idx = derive_rng(seed, "explain-sample", group).choice(idx, cap, replace=False)
        keep.append(idx)
    return test.subset(np.sort(np.concatenate(keep)))


class ExperimentRunner:
    """Runs plans, collecting result rows and per-cell failures."""

    def __init__(self, workers: int = 1, dump_dir: Optional[Union[str, Path]] = None):
        """
        Args:
            workers: Threads used across (grid point, trial) units
            dump_dir: When set, one explanation CSV per cell is written here
        """
        self.workers = check_int_at_least("workers", workers, 1)
        self.dump_dir = Path(dump_dir) if dump_dir else None
        self.failures: List[FailureRecord] = []
        self.logger = logging.getLogger(__name__)
        self._adult_cache: Optional[Tuple[AdultConfig, pd.DataFrame]] = None

    def run_plan(self, plan: ExperimentPlan) -> List[ResultRow]:
        """
        Execute every (grid point x variant x trial) cell of ``plan``.

        A failing cell is logged, recorded in ``self.failures`` and skipped.
        Rows come back in cell order whatever the completion order.
        """
        self.failures = []
        units = [(k, point, trial) for k, point in enumerate(plan.grid) for trial in range(plan.trials)]
        self.logger.info(f"Running {plan.objective}: {len(plan.grid)} grid points x "
                         f"{len(plan.variants)} variants x {plan.trials} trials = {plan.n_runs} runs")
        if plan.is_adult:
            # Parsed before the pool starts; workers only read it.
            try:
                self._adult_records(plan.adult)
            except Exception as e:
                self.logger.error(f"{plan.objective}: loading Adult records failed: {e}")
                for _, point, trial in units:
                    param, value = plan.point_label(point)
                    self.failures.extend(FailureRecord(run_id_for(plan.objective, variant, param, value),
                                                       trial, "data", str(e)) for variant in plan.variants)
                return []

        if self.workers == 1:
            outcomes = [self._run_unit(plan, point, trial) for _, point, trial in units]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                futures = [pool.submit(self._run_unit, plan, point, trial) for _, point, trial in units]
                outcomes = [f.result() for f in futures]

        rows: List[ResultRow] = []
        for unit_rows, unit_failures in outcomes:
            rows.extend(unit_rows)
            self.failures.extend(unit_failures)
        self.logger.info(f"Finished {plan.objective}: {len(rows)} rows, {len(self.failures)} failed cells")
        return rows

    def _run_unit(self, plan: ExperimentPlan, point: Any,
                  trial: int) -> Tuple[List[ResultRow], List[FailureRecord]]:
        seed = plan.base_seed + trial
        param, value = plan.point_label(point)
        rows: List[ResultRow] = []
        failures: List[FailureRecord] = []
        try:
            data = self.prepare_data(plan, point, seed)
        except Exception as e:
            self.logger.error(f"{plan.objective} {param}={value} trial {trial}: data preparation failed: {e}")
            for variant in plan.variants:
                failures.append(FailureRecord(run_id_for(plan.objective, variant, param, value), trial, "data", str(e)))
            return rows, failures

        for variant in plan.variants:
            run_id = run_id_for(plan.objective, variant, param, value)
            progress = {"stage": "train"}
            try:
                rows.extend(self._run_cell(plan, data, variant, run_id, param, value, trial, seed, progress))
            except Exception as e:
                self.logger.error(f"{run_id} trial {trial}: {progress['stage']} failed: {e}")
                failures.append(FailureRecord(run_id, trial, progress["stage"], str(e)))
        return rows, failures

    def prepare_data(self, plan: ExperimentPlan, point: Any, seed: int) -> PreparedData:
        """Generate (or load), split and restrict the data for one grid point."""
        if plan.is_adult:
            return self._prepare_adult(plan, point, seed)

        objective = Objective.parse(plan.objective)
        spec = replace(plan.data_spec, seed=seed)
        if objective is Objective.CONCEPT_SHIFT:
            spec = replace(spec, beta=float(point))
        elif objective is Objective.OMITTED_VARIABLE:
            spec = replace(spec, alpha=float(point))
        population = sample_population(spec)
        train_ds, test_ds = split_train_test(population, plan.train_fraction, seed)

        if objective is Objective.SAMPLE_SIZE:
            train_ds = apply_proportion_filter(train_ds, float(point), seed)
        elif objective is Objective.COVARIATE_SHIFT:
            train_ds, _ = apply_covariate_shift(train_ds, float(point))
        elif objective is Objective.CONCEPT_SHIFT:
            self._log_interaction(train_ds, "L", f"beta={point} seed {seed}")

        explained = sample_explained(test_ds, plan.max_explained_per_group, seed)
        return PreparedData(train_ds, test_ds, explained)

    def _adult_records(self, cfg: AdultConfig) -> pd.DataFrame:
        if self._adult_cache is None or self._adult_cache[0] != cfg:
            self._adult_cache = (cfg, load_raw(cfg))
        return self._adult_cache[1]

    def _prepare_adult(self, plan: ExperimentPlan, scenario: Scenario, seed: int) -> PreparedData:
        records = self._adult_records(plan.adult)
        if plan.adult.drop_missing:
            records = records.dropna(subset=list(ADULT_COLUMNS)).reset_index(drop=True)
        train_idx, test_idx = split_indices(len(records), plan.train_fraction, seed)
        fit_mask = np.zeros(len(records), dtype=bool)
        fit_mask[train_idx] = True
        enc: EncodedDataset = preprocess(records, plan.adult, fit_mask)
        train_ds = enc.dataset.subset(train_idx)
        test_ds = enc.dataset.subset(test_idx)
        train_ds = build_scenario(enc, train_ds, scenario, seed)
        if isinstance(scenario, Balanced5050) and "hours-per-week" in enc.scaler:
            self._log_interaction(train_ds, "hours-per-week", f"Adult seed {seed}")

        sensitive = enc.encoding.get(enc.sensitive_column, ())
        omitted = enc.encoding.get("native-country", ())
        explained = sample_explained(test_ds, plan.max_explained_per_group, seed)
        return PreparedData(train_ds, test_ds, explained, tuple(sensitive), tuple(omitted), enc.blocks)

    def _log_interaction(self, train_ds: TabularDataset, covariate: str, context: str) -> None:
        try:
            result = concept_shift_test(train_ds, covariate=covariate)
        except FitError as e:
            self.logger.warning(f"{context}: interaction test did not converge: {e}")
            return
        self.logger.info(f"{context}: group x {covariate} interaction p-value {result.p_value:.3g}")

    def _run_cell(self, plan: ExperimentPlan, data: PreparedData, variant: str, run_id: str,
                  param: str, value: Any, trial: int, seed: int,
                  progress: Dict[str, str]) -> List[ResultRow]:
        spec = ModelSpec.for_variant(
            variant, data.train.names, data.sensitive_columns, data.omitted_columns,
            seed=derive_seed(seed, "model", variant), hidden_dims=plan.hidden_dims,
        )
        model = train(spec, data.train, plan.train_config)

        progress["stage"] = "explain"
        scaler = FeatureScaler.from_dataset(data.train, spec.feature_names, data.blocks,
                                            plan.explainer.categorical_columns)
        explainer = replace(plan.explainer, seed=derive_seed(seed, "lime", variant))
        expls = explain_batch(model, data.explain, explainer, scaler)
        if self.dump_dir is not None:
            self._dump(expls, run_id, trial)

        progress["stage"] = "metrics"

        def row(q_kind: str, metric: str, group: str, v: float) -> ResultRow:
            return ResultRow(run_id, plan.objective, variant, param, value, trial, seed,
                             q_kind, metric, group, float(v))

        rows = []
        for q_kind in plan.q_kinds:
            records = fidelity_from_explanations(expls, q_kind)
            ci_method = "bootstrap" if plan.ci_method == "bootstrap" else "none"
            report = build_report(records, q_kind, ci_method=ci_method, n_resamples=plan.bootstrap_resamples,
                                  seed=derive_seed(seed, "bootstrap", variant), n_groups=2)
            rows.append(row(q_kind, "max_gap", "all", report.max_gap))
            rows.append(row(q_kind, "mean_gap", "all", report.mean_gap))
            rows.append(row(q_kind, "overall_Q", "all", report.overall_Q))
            rows.extend(row(q_kind, "group_Q", str(j), v) for j, v in sorted(report.per_group_Q.items()))
            for statistic, (low, high) in report.ci.items():
                rows.append(row(q_kind, f"{statistic}_ci_low", "all", low))
                rows.append(row(q_kind, f"{statistic}_ci_high", "all", high))

        accuracies = group_accuracies(model, data.test)
        rows.append(row(BLACKBOX_Q, "bb_acc_gap", "all", accuracies["gap"]))
        rows.append(row(BLACKBOX_Q, "bb_group_acc", "0", accuracies["0"]))
        rows.append(row(BLACKBOX_Q, "bb_group_acc", "1", accuracies["1"]))
        self.logger.info(f"{run_id} trial {trial}: mean gap {rows[1].value:.4f}, "
                         f"black-box accuracy gap {accuracies['gap']:.4f}")
        return rows

    def _dump(self, expls, run_id: str, trial: int) -> Path:
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        safe = run_id.replace("|", "__").replace("=", "-").replace("/", "_")
        path = self.dump_dir / f"{safe}__trial{trial}.csv"
        explanations_to_frame(expls).to_csv(path, index=False)
        return path


def run_plan(plan: ExperimentPlan, workers: int = 1,
             dump_dir: Optional[Union[str, Path]] = None) -> Tuple[List[ResultRow], List[FailureRecord]]:
    """Run ``plan`` with a fresh runner; returns rows and failures."""
    runner = ExperimentRunner(workers=workers, dump_dir=dump_dir)
    rows = runner.run_plan(plan)
    return rows, runner.failures


def rows_to_frame(rows: Union[Sequence[ResultRow], pd.DataFrame]) -> pd.DataFrame:
    if isinstance(rows, pd.DataFrame):
        return rows
    return pd.DataFrame([vars(r) for r in rows], columns=ResultRow.field_names())


def summarize(rows: Union[Sequence[ResultRow], pd.DataFrame], level: float = 0.95,
              ci_method: str = "t") -> pd.DataFrame:
    """
    Mean over trials with a confidence interval per
    (objective, variant, sweep value, metric, q_kind, group).

    ``t`` uses a Student-t interval across trials (NaN for one trial);
    ``bootstrap`` averages the per-trial bootstrap bounds recorded in the rows.
    """
    check_choice("ci_method", ci_method, SUMMARY_CI_METHODS)
    frame = rows_to_frame(rows)
    keys = ["objective", "model_variant", "sweep_param", "sweep_value", "metric", "q_kind", "group_or_all"]
    columns = keys + ["mean", "ci_low", "ci_high", "n_trials"]
    if frame.empty:
        return pd.DataFrame(columns=columns)

    is_bound = frame["metric"].str.endswith("_ci_low") | frame["metric"].str.endswith("_ci_high")
    bounds = frame[is_bound]
    out = []
    for key, part in frame[~is_bound].groupby(keys, sort=False, dropna=False):
        values = part["value"].to_numpy(dtype=float)
        low = high = float("nan")
        if ci_method == "t" and len(values) >= 2:
            try:
                low, high = trial_ci(values, level)
            except MetricError:
                pass
        elif ci_method == "bootstrap":
            match = bounds[(bounds["run_id"] == part["run_id"].iloc[0]) & (bounds["q_kind"] == key[5])]
            lows = match[match["metric"] == f"{key[4]}_ci_low"]["value"]
            highs = match[match["metric"] == f"{key[4]}_ci_high"]["value"]
            if len(lows) and len(highs):
                low, high = float(lows.mean()), float(highs.mean())
        out.append(dict(zip(keys, key), mean=float(values.mean()), ci_low=low, ci_high=high,
                        n_trials=int(part["trial"].nunique())))
    return pd.DataFrame(out, columns=columns)
