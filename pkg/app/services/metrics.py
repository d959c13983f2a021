"""
Run metrics: summaries over step series and the CSV / JSON result files.
"""

import json
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from app.models.reports import MetricsReport, MetricsSummary, StepMetrics
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

# leading share of steps left out of the averaged EE error
TRANSIENT_FRACTION = 0.05
FLOAT_FORMAT = "%.17g"
METRIC_COLUMNS = ("ee_err_m", "rcm_err_m", "mu", "min_clearance_m", "beta_a", "solve_ms")


class MetricsError(ValueError):
    """Summary requested for an empty series"""
    pass


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return 0.0, 0.0
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def _summarize(chunks: Sequence[Sequence[StepMetrics]], transient_fraction: float) -> MetricsSummary:
    ee_all: list[float] = []
    ee_steady: list[float] = []
    rcm: list[float] = []
    mu: list[float] = []
    clearance: list[float] = []
    beta: list[float] = []
    solve: list[float] = []
    for series in chunks:
        skip = int(math.floor(transient_fraction * len(series)))
        for k, row in enumerate(series):
            ee_all.append(row.ee_err_m)
            if k >= skip:
                ee_steady.append(row.ee_err_m)
            rcm.append(row.rcm_err_m)
            mu.append(row.mu)
            clearance.append(row.min_clearance_m)
            beta.append(row.beta_a)
            solve.append(row.solve_ms)
    if not ee_all:
        raise MetricsError("cannot summarize an empty series")

    ee_avg, ee_std = _mean_std(np.asarray(ee_steady))
    rcm_avg, rcm_std = _mean_std(np.asarray(rcm))
    mu_avg, mu_std = _mean_std(np.asarray(mu))
    lowest = float(np.min(clearance))
    return MetricsSummary(
        steps=max(len(s) for s in chunks),
        avg_ee_err_m=ee_avg,
        std_ee_err_m=ee_std,
        max_ee_err_m=float(np.max(ee_all)),
        avg_rcm_err_m=rcm_avg,
        std_rcm_err_m=rcm_std,
        max_rcm_err_m=float(np.max(rcm)),
        avg_mu=mu_avg,
        std_mu=mu_std,
        min_clearance_m=lowest if math.isfinite(lowest) else None,
        max_beta_a=float(np.max(beta)),
        wall_ms_per_step=float(np.mean(solve)),
    )


def compute_metrics(
    series: Sequence[StepMetrics],
    transient_fraction: float = TRANSIENT_FRACTION,
) -> MetricsSummary:
    """
    Summary of one chain's series.

    Averages are mean and sample standard deviation; the EE average skips
    the first floor(transient_fraction * steps) rows, maxima use all rows.

    Raises:
        MetricsError: the series is empty
    """
    return _summarize([series], transient_fraction)


def combine_metrics(
    series: Sequence[Sequence[StepMetrics]],
    transient_fraction: float = TRANSIENT_FRACTION,
) -> MetricsSummary:
    """Pooled summary over several chains, transient skipped per chain"""
    return _summarize(series, transient_fraction)


def series_frame(series: Sequence[StepMetrics], dof: int) -> pd.DataFrame:
    """Series as a frame with columns t, q0..q{n-1}, then the metric columns"""
    columns = ["t", *(f"q{i}" for i in range(dof)), *METRIC_COLUMNS]
    rows = [
        [row.t, *row.q, *(getattr(row, c) for c in METRIC_COLUMNS)]
        for row in series
    ]
    return pd.DataFrame(rows, columns=columns, dtype=float)


def write_series_csv(series: Sequence[StepMetrics], dof: int, path: Union[str, Path]) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    series_frame(series, dof).to_csv(
        out, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )
    return out


def read_series_csv(path: Union[str, Path]) -> list[StepMetrics]:
    """Parse a CSV written by ``write_series_csv`` back into step rows"""
    frame = pd.read_csv(path, float_precision="round_trip")
    q_cols = [c for c in frame.columns if c.startswith("q") and c[1:].isdigit()]
    q_cols.sort(key=lambda c: int(c[1:]))
    return [
        StepMetrics(
            t=float(rec["t"]),
            q=[float(rec[c]) for c in q_cols],
            **{c: float(rec[c]) for c in METRIC_COLUMNS},
        )
        for rec in frame.to_dict(orient="records")
    ]


def series_file_name(csv_name: str, chain_index: int, chain_count: int) -> str:
    """``steps.csv`` for one chain, ``steps_0.csv``, ``steps_1.csv`` for two"""
    if chain_count == 1:
        return csv_name
    path = Path(csv_name)
    return f"{path.stem}_{chain_index}{path.suffix}"


class ResultWriter:
    """Writes a report's series CSVs and summary JSON into one directory"""

    def __init__(self, directory: Union[str, Path], csv_name: str = "steps.csv", summary_name: str = "summary.json"):
        self.directory = Path(directory)
        self.csv_name = csv_name
        self.summary_name = summary_name

    def write(self, report: MetricsReport) -> dict[str, str]:
        """Write all files and return them keyed by role"""
        self.directory.mkdir(parents=True, exist_ok=True)
        files: dict[str, str] = {}
        for chain in report.chains:
            name = series_file_name(self.csv_name, chain.index, len(report.chains))
            path = write_series_csv(chain.series, chain.dof, self.directory / name)
            files[f"series_{chain.index}"] = str(path)

        summary_path = self.directory / self.summary_name
        files["summary"] = str(summary_path)
        document = report.model_copy(update={"files": files}).summary_document()
        summary_path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")

        logger.info("Wrote scenario results", extra={
            "directory": str(self.directory),
            "files": len(files),
        })
        return files
