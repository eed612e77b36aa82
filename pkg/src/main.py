"""
Command-line entry point for the explanation disparity audit.
"""

import argparse
import logging
import subprocess
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any, List, Optional, Sequence

import pandas as pd

# Add src directory to path
sys.path.append(str(Path(__file__).parent))

from config.settings import DEFAULT_CONFIG_PATH, Config
from core.adult_loader import GroupFraction, HoursCap, Proportion
from core.data_generator import DataGenSpec, Objective, sample_population, save_dataset, summary_stats
from core.experiment_runner import (
    ADULT_SCENARIOS,
    ExperimentPlan,
    ExperimentRunner,
    adult_plan,
    objective_defaults,
    summarize,
)
from core.fidelity_metrics import QKind, build_report, fidelity_from_frame
from core.plot_renderer import render_plots
from utils.data_processor import DataProcessor
from utils.errors import ConfigurationError

REPO_ROOT = Path(__file__).resolve().parent.parent
SWEEPABLE_SCENARIOS = (Proportion, GroupFraction, HoursCap)


def _split_list(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [item.strip() for item in text.split(",") if item.strip()]


def parse_grid(text: Optional[str]) -> Optional[List[float]]:
    """Comma-separated sweep values, e.g. ``0.1,0.3,0.5``."""
    items = _split_list(text)
    if items is None:
        return None
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigurationError("grid", f"sweep values must be numbers, got {text!r}")


class AuditApp:
    """Wires configuration, experiments and persistence behind the CLI commands."""

    def __init__(self, config: Config, log_level: Optional[str] = None):
        """
        Initialize the application.

        Args:
            config: Loaded configuration (flags already applied)
            log_level: Overrides the configured level when given
        """
        self.config = config
        self.data_processor = DataProcessor(config.get_output_dir())
        self._setup_logging(log_level)

    def _setup_logging(self, log_level: Optional[str]) -> None:
        """Setup logging configuration."""
        level_name = (log_level or self.config.get_log_level()).upper()
        level = getattr(logging, level_name, None)
        if not isinstance(level, int):
            raise ConfigurationError("logging.level", f"unknown log level {level_name!r}")

        handlers: List[logging.Handler] = [logging.StreamHandler()]
        log_file = self.config.get_log_file()
        if log_file:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            handlers.append(logging.FileHandler(log_file))

        logging.basicConfig(
            level=level,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            handlers=handlers,
            force=True,
        )
        self.logger = logging.getLogger(__name__)

    def _output_path(self, out: Optional[str], default_name: str) -> Path:
        return Path(out).resolve() if out else self.data_processor.export_dir / default_name

    def generate(self, objective: str, out_dir: Optional[str], seed: Optional[int]) -> Path:
        """Sample one synthetic population and write it with its sidecar."""
        overrides = {} if seed is None else {"seed": seed}
        spec = self.config.get_data_spec(objective, **overrides)
        dataset = sample_population(spec)
        target = Path(out_dir) if out_dir else self.data_processor.export_dir
        path = save_dataset(dataset, target / f"{spec.objective.value}_seed{spec.seed}.csv")
        stats = summary_stats(dataset)
        self.logger.info(f"Generated {dataset.n_rows} rows for {spec.objective.value}")
        print(stats.to_string(float_format=lambda v: f"{v:.4f}"))
        return path

    def build_synthetic_plan(self, args: argparse.Namespace) -> ExperimentPlan:
        objective = Objective.parse(args.objective)
        plan = objective_defaults(objective, data_spec=self.config.get_data_spec(objective),
                                  **self.config.get_plan_overrides())
        return self._apply_run_flags(plan, args)

    def build_adult_plan(self, args: argparse.Namespace) -> ExperimentPlan:
        plan = adult_plan(
            args.scenario,
            self.config.get_adult_config(args.data),
            sweep=args.sweep or self.config.get_proportion_sweep(),
            include_gender_omissions=args.gender_omissions or self.config.get_include_gender_omissions(),
            **self.config.get_plan_overrides(),
        )
        return self._apply_run_flags(plan, args)

    def _apply_run_flags(self, plan: ExperimentPlan, args: argparse.Namespace) -> ExperimentPlan:
        changes: dict = {}
        if args.trials is not None:
            changes["trials"] = args.trials
        if args.seed is not None:
            changes["base_seed"] = args.seed
        if args.variants:
            changes["variants"] = tuple(_split_list(args.variants))
        if args.max_per_group is not None:
            changes["max_explained_per_group"] = None if args.max_per_group == "all" else int(args.max_per_group)
        grid = parse_grid(args.grid)
        if grid:
            if plan.is_adult:
                kind = type(plan.grid[0])
                if kind not in SWEEPABLE_SCENARIOS:
                    raise ConfigurationError("grid", f"the {plan.objective} scenario has no sweep values")
                changes["grid"] = tuple(kind(v) for v in grid)
            else:
                changes["grid"] = tuple(grid)
        return replace(plan, **changes) if changes else plan

    def run_plan(self, plan: ExperimentPlan, out: Optional[str], workers: Optional[int],
                 dump_dir: Optional[str]) -> Path:
        """Run every cell, then persist rows, the failure log and a manifest."""
        runner = ExperimentRunner(workers=workers or self.config.get_workers(), dump_dir=dump_dir)
        rows = runner.run_plan(plan)
        path = self.data_processor.export_results(rows, self._output_path(out, f"{plan.objective}.csv"))
        self.data_processor.export_failures(runner.failures, path)
        manifest = asdict(plan)
        manifest.update(n_rows=len(rows), n_failures=len(runner.failures))
        self.data_processor.export_to_json(manifest, path.with_name(path.stem + ".manifest.json"))
        self._display_run_summary(plan, len(rows), runner.failures)
        return path

    def _display_run_summary(self, plan: ExperimentPlan, n_rows: int, failures: Sequence[Any]) -> None:
        print("\n" + "=" * 60)
        print(f"RUN SUMMARY: {plan.objective}")
        print("=" * 60)
        print(f"Sweep: {plan.sweep_param} over {len(plan.grid)} points")
        print(f"Variants: {', '.join(plan.variants)}")
        print(f"Cells: {plan.n_runs} ({len(failures)} failed)")
        print(f"Result rows: {n_rows}")
        for failure in failures[:10]:
            print(f"  failed {failure.run_id} trial {failure.trial} at {failure.stage}: {failure.error}")
        print("=" * 60)

    def report(self, in_path: str, out_dir: Optional[str], ci_method: Optional[str] = None,
               explanations: Optional[str] = None) -> List[Path]:
        """Summarize a result CSV into summary.csv and SVG trend plots."""
        rows = self.data_processor.load_results(in_path)
        failures = self.data_processor.load_failures(in_path)
        if failures:
            self.logger.warning(f"{len(failures)} cells of {in_path} failed and are absent from the summary")
        if ci_method is None:
            has_bounds = rows["metric"].str.endswith("_ci_low").any()
            ci_method = "bootstrap" if has_bounds else "t"
        summary = summarize(rows, ci_method=ci_method)

        target = Path(out_dir) if out_dir else self.data_processor.export_dir
        written = [self.data_processor.export_summary(summary, target.resolve() / "summary.csv")]
        written += render_plots(summary, target)
        if explanations:
            written.append(self._report_explanations(Path(explanations), target))
        return written

    def _report_explanations(self, dump_dir: Path, target: Path) -> Path:
        """Recompute fidelity from explanation dumps (one report per file and measure)."""
        dumps = sorted(dump_dir.glob("*.csv"))
        if not dumps:
            self.logger.warning(f"No explanation dumps found in {dump_dir}")
        reports = []
        for dump in dumps:
            frame = pd.read_csv(dump)
            for q_kind in self.config.get_q_kinds():
                records = fidelity_from_frame(frame, q_kind)
                reports.append((dump.stem, build_report(records, QKind.parse(q_kind), n_groups=2)))
        return self.data_processor.export_report(reports, target.resolve() / "fidelity_report.csv")

    def run_oracles(self, extra: Sequence[str] = ()) -> int:
        """Run the brute-force and finite-difference oracle suites."""
        command = [sys.executable, "-m", "pytest", "-m", "oracle", *extra]
        self.logger.info(f"Running {' '.join(command)}")
        try:
            result = subprocess.run(command, cwd=REPO_ROOT, check=False)
        except FileNotFoundError as e:
            self.logger.error(f"Could not launch pytest: {e}")
            return 1
        return result.returncode


def qualify_params(params: Sequence[str], command: str) -> List[str]:
    """Let ``gen`` take bare DataGenSpec fields, so ``beta=0.5`` means ``data.beta=0.5``."""
    if command != "gen":
        return list(params)
    known = {f.name for f in fields(DataGenSpec)} - {"objective"}
    qualified = []
    for text in params:
        key = text.partition("=")[0].strip()
        qualified.append(f"data.{text.strip()}" if key in known else text)
    return qualified


def _common_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a command that omits these from clobbering the global values.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="Configuration file path")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--param", dest="command_params", action="append", default=argparse.SUPPRESS,
                        metavar="SECTION.KEY=VALUE", help="Override a config value; repeatable")
    return common


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid", help="Comma-separated sweep values replacing the default grid")
    parser.add_argument("--trials", type=int, help="Trials per grid point (default 5)")
    parser.add_argument("--seed", type=int, help="Base seed; trial t uses seed + t")
    parser.add_argument("--out", help="Result CSV path")
    parser.add_argument("--variants", help="Comma-separated model variants, e.g. LR_A,MLP_noA")
    parser.add_argument("--max-per-group", help="Explained test rows per group, or 'all'")
    parser.add_argument("--workers", type=int, help="Threads across (grid point, trial) units")
    parser.add_argument("--dump-explanations", metavar="DIR", help="Write one explanation CSV per cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdaudit", description="LIME explanation fidelity disparity audit")
    parser.add_argument("--config", help=f"Configuration file path (default {DEFAULT_CONFIG_PATH} if present)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--param", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override a config value; repeatable")
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    gen = commands.add_parser("gen", parents=[common], help="Sample a synthetic population to CSV")
    gen.add_argument("--objective", required=True, help="1-4 or sample_size, covariate_shift, "
                                                        "concept_shift, omitted_variable")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", help="Output directory")

    run = commands.add_parser("run", parents=[common], help="Run a synthetic sweep")
    run.add_argument("--objective", required=True)
    _add_run_flags(run)

    adult = commands.add_parser("adult", parents=[common], help="Run an Adult scenario")
    adult.add_argument("--scenario", required=True, choices=ADULT_SCENARIOS)
    adult.add_argument("--data", help="Directory holding adult.data and adult.test")
    adult.add_argument("--sweep", choices=("disadvantaged_share", "advantaged_fraction"),
                       help="Proportion scenario direction")
    adult.add_argument("--gender-omissions", action="store_true",
                       help="Omitted scenario: also drop sex, alone and with nationality")
    _add_run_flags(adult)

    report = commands.add_parser("report", parents=[common], help="Summarize results and render plots")
    report.add_argument("--in", dest="in_path", required=True, help="Result CSV")
    report.add_argument("--out", help="Output directory")
    report.add_argument("--ci-method", choices=("t", "bootstrap"), help="Default: detected from the rows")
    report.add_argument("--explanations", metavar="DIR", help="Recompute fidelity from explanation dumps")

    oracles = commands.add_parser("test-oracles", help="Run the oracle test suites")
    oracles.add_argument("pytest_args", nargs=argparse.REMAINDER, help="Extra pytest arguments")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "test-oracles":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")

    try:
        config_path = args.config
        if config_path is None and Path(DEFAULT_CONFIG_PATH).exists():
            config_path = DEFAULT_CONFIG_PATH
        params = qualify_params(args.param + getattr(args, "command_params", []), args.command)
        config = Config(config_path, overrides=params)
        app = AuditApp(config, args.log_level)

        if args.command == "gen":
            app.generate(args.objective, args.out, args.seed)
        elif args.command == "run":
            plan = app.build_synthetic_plan(args)
            app.run_plan(plan, args.out, args.workers, args.dump_explanations)
        elif args.command == "adult":
            plan = app.build_adult_plan(args)
            app.run_plan(plan, args.out, args.workers, args.dump_explanations)
        elif args.command == "report":
            for path in app.report(args.in_path, args.out, args.ci_method, args.explanations):
                print(path)
        else:
            # Leading pytest options arrive as unknown arguments.
            return app.run_oracles(extra + args.pytest_args)
        return 0

    except Exception as e:
        print(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
