"""
Result persistence: experiment rows, failure logs, summaries and reports.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import pandas as pd

from core.experiment_runner import FailureRecord, ResultRow, rows_to_frame
from core.fidelity_metrics import FidelityReport

PathLike = Union[str, Path]

FAILURE_COLUMNS = ["run_id", "trial", "stage", "error"]


class DataProcessor:
    """Writes and reads the CSV artifacts of a run."""

    def __init__(self, export_dir: PathLike = "results"):
        """
        Initialize the data processor.

        Args:
            export_dir: Directory that relative filenames are resolved against
        """
        self.export_dir = Path(export_dir)
        self.logger = logging.getLogger(__name__)

    def _resolve(self, filename: PathLike, suffix: str = ".csv") -> Path:
        path = Path(filename)
        if not path.is_absolute() and path.parent == Path("."):
            path = self.export_dir / path
        if not path.suffix:
            path = path.with_suffix(suffix)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def export_results(self, rows: Union[Sequence[ResultRow], pd.DataFrame], filename: PathLike) -> Path:
        """
        Write result rows with the header in ResultRow field order.

        Returns:
            Path to the exported file
        """
        path = self._resolve(filename)
        frame = rows_to_frame(rows)
        if frame.empty:
            self.logger.warning(f"No result rows to export to {path}")
        frame.to_csv(path, index=False, columns=ResultRow.field_names())
        self.logger.info(f"{len(frame)} result rows exported to {path}")
        return path

    def export_failures(self, failures: Sequence[FailureRecord], results_path: PathLike) -> Path:
        """Write the failure log next to the results (``<results>.failures.csv``)."""
        results_path = Path(results_path)
        path = results_path.with_name(results_path.stem + ".failures.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame([vars(f) for f in failures], columns=FAILURE_COLUMNS)
        frame.to_csv(path, index=False)
        if failures:
            self.logger.warning(f"{len(failures)} failed cells logged to {path}")
        return path

    def export_summary(self, summary: pd.DataFrame, filename: PathLike = "summary.csv") -> Path:
        path = self._resolve(filename)
        summary.to_csv(path, index=False)
        self.logger.info(f"Summary exported to {path}")
        return path

    def export_report(self, reports: Iterable[Tuple[str, FidelityReport]],
                      filename: PathLike = "fidelity_report.csv") -> Path:
        """
        Write (metric, q_kind, group_or_all, value, ci_low, ci_high) rows for
        each ``(source, report)`` pair, keyed by a leading ``source`` column.
        """
        path = self._resolve(filename)
        frames = [r.to_frame().assign(source=source) for source, r in reports]
        columns = ["source", "metric", "q_kind", "group_or_all", "value", "ci_low", "ci_high"]
        frame = pd.concat(frames, ignore_index=True)[columns] if frames else pd.DataFrame(columns=columns)
        frame.to_csv(path, index=False)
        self.logger.info(f"Fidelity report ({len(frames)} reports) exported to {path}")
        return path

    def export_to_json(self, data: Dict[str, Any], filename: PathLike) -> Path:
        """
        Export a mapping (e.g. a run manifest) to JSON.

        Args:
            data: Data to export
            filename: Output filename

        Returns:
            Path to the exported file
        """
        path = self._resolve(filename, ".json")
        with open(path, "w") as f:
            json.dump(data, f, indent=2, default=str, sort_keys=True)
        self.logger.info(f"Data exported to {path}")
        return path

    def load_results(self, path: PathLike) -> pd.DataFrame:
        """Read a result CSV, checking its header."""
        frame = pd.read_csv(path)
        expected = ResultRow.field_names()
        if list(frame.columns) != expected:
            raise ValueError(f"{path}: header {list(frame.columns)} does not match {expected}")
        frame["group_or_all"] = frame["group_or_all"].astype(str)
        return frame

    def load_failures(self, results_path: PathLike) -> List[FailureRecord]:
        results_path = Path(results_path)
        path = results_path.with_name(results_path.stem + ".failures.csv")
        if not path.exists():
            return []
        frame = pd.read_csv(path)
        return [FailureRecord(str(r.run_id), int(r.trial), str(r.stage), str(r.error))
                for r in frame.itertuples(index=False)]
