"""
Reporting and Output Formatting Module

This module writes experiment outputs: iteration traces, gradient and
distribution tables, buffer dumps, sweep summaries (CSV, JSON, Excel),
bound reports (JSON plus a flat CSV row) and static SVG line plots.
"""

import csv
import json
import logging
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.models import BoundReport, Buffer, GradientReport, StateDistribution, Trace  # noqa: E402


logger = logging.getLogger(__name__)

TRACE_FIELDS = ["iter", "J", "grad_norm_biased", "grad_norm_unbiased", "tv_mismatch", "eta"]
BOUND_SUMMARY_FIELDS = [
    "environment", "gamma", "kind", "n_policies", "m", "alpha", "beta", "d_const", "c_min", "c_min_gamma",
    "g_const", "l_estimate", "sigma", "b", "c", "big_b", "big_c", "kappa",
    "ratio_dgamma_over_dpi", "ratio_dpi_over_dgamma", "bound_eq8", "bound_eq9", "bound_eq11", "bound_eq12",
    "passed", "violations",
]

# Reproducible SVG output: fixed element ids and no timestamp.
plt.rcParams["svg.hashsalt"] = "pglab"
SVG_METADATA = {"Date": None}


def format_value(value: Any) -> Any:
    """CSV cell text: floats with 17 significant digits, everything else unchanged."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, Enum):
        return value.value
    if value is None:
        return ""
    return value


def to_jsonable(value: Any) -> Any:
    """Convert numpy, enum and datetime values inside nested containers to JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    return value


class ReportGenerator:
    """
    Writes every output file of an experiment run into one directory.
    """

    def __init__(self, output_directory: Union[str, Path] = "./runs", formats: Optional[List[str]] = None,
                 emit_plots: bool = True):
        """
        Initialize the report generator.

        Args:
            output_directory: Directory to save outputs
            formats: Renderings of tabular summaries ('csv', 'json', 'excel')
            emit_plots: Whether plot calls write SVG files
        """
        self.output_directory = Path(output_directory)
        self.output_directory.mkdir(parents=True, exist_ok=True)
        self.formats = [f.lower() for f in (formats or ["csv", "json"])]
        self.emit_plots = emit_plots
        logger.info(f"Report generator initialized with output directory: {self.output_directory}, "
                    f"formats: {self.formats}")

    def _path(self, name: str, suffix: str) -> Path:
        path = self.output_directory / f"{name}{suffix}"
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_rows_csv(self, rows: Iterable[Dict[str, Any]], fieldnames: Sequence[str], name: str) -> Path:
        """
        Write dictionaries as an RFC-4180 CSV file.

        Args:
            rows: Row dictionaries (missing keys become empty cells)
            fieldnames: Column order
            name: File name without extension, relative to the output directory

        Returns:
            Path to the CSV file
        """
        file_path = self._path(name, ".csv")
        count = 0
        with open(file_path, 'w', newline='', encoding='utf-8') as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=list(fieldnames), extrasaction='ignore')
            writer.writeheader()
            for row in rows:
                writer.writerow({key: format_value(row.get(key)) for key in fieldnames})
                count += 1
        logger.debug(f"Wrote {count} rows to {file_path}")
        return file_path

    def write_json(self, data: Any, name: str) -> Path:
        """Write a JSON document; floats keep their shortest round-trip representation."""
        file_path = self._path(name, ".json")
        with open(file_path, 'w', encoding='utf-8') as jsonfile:
            json.dump(to_jsonable(data), jsonfile, indent=2, ensure_ascii=False)
        logger.debug(f"Wrote JSON document {file_path}")
        return file_path

    def write_trace(self, trace: Trace, name: str) -> Path:
        """Iteration trace CSV with columns iter, J, grad norms, tv_mismatch and eta."""
        rows = ({**record.model_dump(), "J": record.j} for record in trace.records)
        return self.write_rows_csv(rows, TRACE_FIELDS, name)

    def write_gradient_report(self, report: GradientReport, name: str) -> Dict[str, Path]:
        """Per-coordinate gradient CSV plus a JSON document with the scalar diagnostics."""
        frame = report.to_frame()
        csv_path = self.write_rows_csv(frame.to_dict("records"), list(frame.columns), name)
        scalars = report.model_dump(exclude={"unbiased", "biased", "true_grad"})
        json_path = self.write_json(scalars, f"{name}_summary")
        return {"csv": csv_path, "json": json_path}

    def write_distribution(self, dist: StateDistribution, name: str) -> Path:
        """Rows of (state_index, value)."""
        frame = dist.to_frame()
        return self.write_rows_csv(frame.to_dict("records"), ["state_index", "value"], name)

    def write_buffer(self, buffer: Buffer, name: str) -> Path:
        """Rows of (t, s, a, r, s_next, episode_id)."""
        frame = buffer.to_frame()
        return self.write_rows_csv(frame.to_dict("records"), list(frame.columns), name)

    def write_bound_report(self, report: BoundReport, name: str) -> Dict[str, Path]:
        """Full JSON report and a one-row CSV summary."""
        data = report.model_dump()
        data["passed"] = report.passed
        json_path = self.write_json(data, name)
        row = {**data, "violations": "; ".join(report.violations)}
        csv_path = self.write_rows_csv([row], BOUND_SUMMARY_FIELDS, f"{name}_summary")
        return {"json": json_path, "csv": csv_path}

    def write_summary(self, rows: List[Dict[str, Any]], fieldnames: Sequence[str], name: str) -> Dict[str, Path]:
        """
        Write a sweep summary in every configured format.

        Args:
            rows: Summary rows
            fieldnames: Column order
            name: File name without extension

        Returns:
            Dictionary mapping format names to generated file paths
        """
        generated_files = {"csv": self.write_rows_csv(rows, fieldnames, name)}

        for format_type in self.formats:
            try:
                if format_type == 'json':
                    generated_files['json'] = self.write_json(rows, name)
                elif format_type == 'excel':
                    generated_files['excel'] = self.write_excel(rows, fieldnames, name)
            except Exception as e:
                logger.error(f"Failed to generate {format_type} summary: {e}")

        return generated_files

    def write_excel(self, rows: List[Dict[str, Any]], fieldnames: Sequence[str], name: str,
                    sheet_name: str = "Summary") -> Path:
        """Excel workbook with one worksheet holding the rows."""
        file_path = self._path(name, ".xlsx")
        frame = pd.DataFrame([{key: to_jsonable(row.get(key)) for key in fieldnames} for row in rows],
                             columns=list(fieldnames))
        with pd.ExcelWriter(file_path, engine='openpyxl') as writer:
            frame.to_excel(writer, sheet_name=sheet_name, index=False)
        logger.info(f"Generated Excel summary: {file_path}")
        return file_path

    def _save_figure(self, fig, name: str) -> Path:
        file_path = self._path(name, ".svg")
        fig.savefig(file_path, format="svg", metadata=SVG_METADATA)
        plt.close(fig)
        logger.debug(f"Wrote plot {file_path}")
        return file_path

    def plot_j_curves(self, traces: Dict[str, Trace], name: str, title: str,
                      j_star: Optional[float] = None) -> Optional[Path]:
        """Overlay of J against iteration for several runs, with J* as a dashed line."""
        if not self.emit_plots:
            return None
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, trace in traces.items():
            frame = trace.to_frame()
            ax.plot(frame["iter"], frame["J"], label=label)
        if j_star is not None:
            ax.axhline(j_star, color="black", linestyle="--", linewidth=0.8, label="J*")
        ax.set_xlabel("iteration")
        ax.set_ylabel("J")
        ax.set_title(title)
        ax.legend()
        return self._save_figure(fig, name)

    def plot_convergence_curve(self, curve: List[Tuple[int, float, float]], name: str, title: str) -> Optional[Path]:
        """TV of buffer frequencies to d_pi and d_{pi,gamma} against capacity (log x axis)."""
        if not self.emit_plots:
            return None
        capacities = [point[0] for point in curve]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(capacities, [point[1] for point in curve], marker="o", label="TV to d_pi")
        ax.plot(capacities, [point[2] for point in curve], marker="s", label="TV to d_pi,gamma")
        ax.set_xscale("log")
        ax.set_xlabel("buffer capacity")
        ax.set_ylabel("total variation")
        ax.set_title(title)
        ax.legend()
        return self._save_figure(fig, name)
