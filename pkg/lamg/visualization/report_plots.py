import logging
from pathlib import Path
from typing import Dict

import pandas as pd
import plotly.graph_objects as go

logger = logging.getLogger(__name__)


class ReportPlots:
    def __init__(self, output_dir: str):
        """
        Initialize the report figure writer

        Args:
            output_dir (str): Directory the SVG files are written to
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def render_all(self, runs: pd.DataFrame, speedups: pd.DataFrame) -> Dict[str, Path]:
        """
        Build and save every report figure.

        Args:
            runs (pd.DataFrame): One row per run record
            speedups (pd.DataFrame): Per-problem time ratios against each baseline

        Returns:
            Dict[str, Path]: SVG path per figure name
        """
        figures = {
            "speedup_histogram": self.speedup_histogram(speedups),
            "error_box": self.error_box(runs),
            "time_vs_error": self.time_vs_error(runs),
            "eta_trend": self.eta_trend(runs),
            "uniform_frontier": self.uniform_frontier(runs),
        }
        written = {}
        for name, fig in figures.items():
            path = self.output_dir / f"{name}.svg"
            try:
                fig.write_image(str(path), format="svg")
            except Exception as e:
                logger.error(f"Error writing figure {name}: {str(e)}")
                continue
            written[name] = path
        return written

    def _empty(self, title: str) -> go.Figure:
        fig = go.Figure()
        fig.update_layout(title=title)
        return fig

    def speedup_histogram(self, speedups: pd.DataFrame) -> go.Figure:
        """Histogram of baseline time over LAMG time, one trace per baseline"""
        if speedups.empty:
            return self._empty("No speedup data available")
        fig = go.Figure()
        for baseline, group in speedups.groupby("baseline", sort=True):
            fig.add_trace(go.Histogram(x=group["speedup"], name=str(baseline), opacity=0.7))
        fig.update_layout(
            title="Speedup of LAMG over the baselines",
            xaxis_title="Baseline time / LAMG time",
            yaxis_title="Problems",
            barmode="overlay",
        )
        return fig

    def error_box(self, runs: pd.DataFrame) -> go.Figure:
        if runs.empty:
            return self._empty("No error data available")
        fig = go.Figure()
        for method, group in runs.groupby("method", sort=True):
            fig.add_trace(go.Box(y=group["re_l2"], name=str(method), boxpoints="outliers"))
        fig.update_layout(title="Relative L2 error per method", yaxis_title="RE (L2)", yaxis_type="log")
        return fig

    def time_vs_error(self, runs: pd.DataFrame) -> go.Figure:
        if runs.empty:
            return self._empty("No timing data available")
        fig = go.Figure()
        for method, group in runs.groupby("method", sort=True):
            fig.add_trace(go.Scatter(
                x=group["total_time"],
                y=group["re_l2"],
                mode="markers",
                name=str(method),
                text=group["problem_id"],
            ))
        fig.update_layout(
            title="Execution time against relative error",
            xaxis_title="Total time (s)",
            yaxis_title="RE (L2)",
            xaxis_type="log",
            yaxis_type="log",
        )
        return fig

    def eta_trend(self, runs: pd.DataFrame) -> go.Figure:
        """Median vertex count and error of LAMG runs per eta"""
        if runs.empty or "eta" not in runs:
            return self._empty("No eta sweep available")
        lamg = runs[(runs["method"] == "lamg") & runs["eta"].notna()]
        if lamg.empty or lamg["eta"].nunique() < 2:
            return self._empty("No eta sweep available")
        medians = lamg.groupby("eta", sort=True)[["vertex_count", "re_l2", "total_time"]].median().reset_index()
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=medians["eta"], y=medians["re_l2"], mode="lines+markers", name="median RE (L2)"))
        fig.add_trace(go.Scatter(x=medians["eta"], y=medians["vertex_count"], mode="lines+markers",
                                 name="median vertices", yaxis="y2"))
        fig.update_layout(
            title="Effect of eta on error and mesh size",
            xaxis_title="eta",
            yaxis=dict(title="RE (L2)"),
            yaxis2=dict(title="Vertices", overlaying="y", side="right"),
        )
        return fig

    def uniform_frontier(self, runs: pd.DataFrame) -> go.Figure:
        uniform = runs[runs["method"] == "uniform"] if not runs.empty else runs
        if uniform.empty:
            return self._empty("No uniform sweep available")
        medians = uniform.groupby("label", sort=False)[["vertex_count", "re_l2", "total_time"]].median()
        medians = medians.sort_values("vertex_count").reset_index()
        fig = go.Figure()
        fig.add_trace(go.Scatter(
            x=medians["total_time"],
            y=medians["re_l2"],
            mode="lines+markers",
            text=medians["label"],
            name="uniform",
        ))
        others = runs[runs["method"] != "uniform"]
        for method, group in others.groupby("method", sort=True):
            fig.add_trace(go.Scatter(
                x=[group["total_time"].median()],
                y=[group["re_l2"].median()],
                mode="markers",
                name=f"{method} (median)",
            ))
        fig.update_layout(
            title="Uniform meshes: error against time",
            xaxis_title="Total time (s)",
            yaxis_title="RE (L2)",
            xaxis_type="log",
            yaxis_type="log",
        )
        return fig
