import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lamg.models.run_models import MethodTag, NormKind, RunRecord
from lamg.solver.fem import Solution, relative_error
from lamg.visualization.report_plots import ReportPlots

logger = logging.getLogger(__name__)


def probe_errors(sol: Solution, reference_values: np.ndarray, probe_points: np.ndarray) -> Tuple[float, float]:
    """
    Relative L2 and Linf errors of a mesh solution at the probe points.

    Probes outside the solution's mesh are skipped and reported.
    """
    tets, bary = sol.mesh.locate(probe_points)
    inside = tets >= 0
    if not inside.all():
        logger.warning(f"Skipped {int((~inside).sum())} of {len(inside)} probe points outside the mesh")
    values = np.einsum("pi,pi->p", bary[inside], sol.values[sol.mesh.tets[tets[inside]]])
    ref = np.asarray(reference_values)[inside]
    points = np.asarray(probe_points)[inside]
    return relative_error(values, ref, points, NormKind.L2), relative_error(values, ref, points, NormKind.LINF)


def value_errors(values: np.ndarray, reference_values: np.ndarray) -> Tuple[float, float]:
    """Relative errors of values already evaluated at the reference points"""
    points = np.zeros((len(values), 3))
    return relative_error(values, reference_values, points, NormKind.L2), relative_error(values, reference_values, points, NormKind.LINF)


def records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in records])


def quartiles(values: Sequence[float]) -> Tuple[float, float, float]:
    q = pd.Series(values, dtype=float).dropna().quantile([0.25, 0.5, 0.75])
    return float(q.loc[0.25]), float(q.loc[0.5]), float(q.loc[0.75])


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Per method and label: run count and quartiles of error, time and size"""
    rows = []
    for (method, label), group in frame.groupby(["method", "label"], sort=True):
        row = {"method": method, "label": label, "runs": len(group)}
        for column in ("re_l2", "re_linf", "total_time", "vertex_count"):
            q1, median, q3 = quartiles(group[column])
            row[f"{column}_q1"], row[f"{column}_median"], row[f"{column}_q3"] = q1, median, q3
        rows.append(row)
    return pd.DataFrame(rows)


def speedups(frame: pd.DataFrame, baseline: MethodTag, target: MethodTag = MethodTag.LAMG) -> pd.DataFrame:
    """Per problem: baseline total time over target total time"""
    base = frame[frame["method"] == MethodTag(baseline).value][["problem_id", "total_time"]]
    ours = frame[frame["method"] == MethodTag(target).value][["problem_id", "total_time"]]
    base = base.groupby("problem_id", as_index=False).first()
    ours = ours.groupby("problem_id", as_index=False).first()
    merged = base.merge(ours, on="problem_id", suffixes=("_baseline", "_target"))
    merged["speedup"] = merged["total_time_baseline"] / merged["total_time_target"]
    merged.insert(1, "baseline", MethodTag(baseline).value)
    return merged


class Evaluator:
    """Writes report tables and figures for a set of runs"""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def evaluate(self, records: Sequence[RunRecord], figures: bool = True) -> Dict[str, Path]:
        """
        Emit the run table, per-method summary, speedups and figures.

        Args:
            records (Sequence[RunRecord]): Runs with errors filled in
            figures (bool): Also render SVG figures

        Returns:
            Dict[str, Path]: Written file per report item
        """
        frame = records_frame(records)
        return self.evaluate_frame(frame, figures)

    def evaluate_frame(self, frame: pd.DataFrame, figures: bool = True) -> Dict[str, Path]:
        written: Dict[str, Path] = {}
        written["runs"] = self._write(frame, "runs.csv")
        written["summary"] = self._write(summarize(frame), "summary.csv")

        tables: List[pd.DataFrame] = []
        for baseline in (MethodTag.AMR, MethodTag.WOS, MethodTag.AMG, MethodTag.UNIFORM):
            if (frame["method"] == baseline.value).any() and (frame["method"] == MethodTag.LAMG.value).any():
                tables.append(speedups(frame, baseline))
        speedup_frame = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
        written["speedups"] = self._write(speedup_frame, "speedups.csv")

        if figures:
            written.update(ReportPlots(self.output_dir).render_all(frame, speedup_frame))
        logger.info(f"Report written to {self.output_dir}")
        return written

    def _write(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def load_runs(paths: Sequence[str]) -> pd.DataFrame:
    frames = [pd.read_csv(p) for p in paths if Path(p).exists()]
    if not frames:
        return pd.DataFrame()
    frame = pd.concat(frames, ignore_index=True)
    if "label" in frame:
        frame["label"] = frame["label"].fillna("")
    return frame


def median_by(frame: pd.DataFrame, method: MethodTag, column: str, label: Optional[str] = None) -> float:
    rows = frame[frame["method"] == MethodTag(method).value]
    if label is not None:
        rows = rows[rows["label"] == label]
    return float(rows[column].median())
