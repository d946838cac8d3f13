import logging
import warnings
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lamg.exceptions import QualityCollapse
from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.mesher.refinement import bisect_tets, snap_vertices
from lamg.models.config_models import AmrConfig
from lamg.models.run_models import NormKind
from lamg.solver.fem import Solution, relative_error, solve_problem
from lamg.solver.problem import PoissonProblem
from lamg.solver.tet_mesh import TetMesh, min_dihedral_angles
from lamg.utils.timing import StageTimer

logger = logging.getLogger(__name__)

QUALITY_COLLAPSE_DEG = 1.0


def recovered_gradients(mesh: TetMesh, sol: Solution) -> np.ndarray:
    """(V, 3) volume-weighted average of the P1 gradients around each vertex"""
    grads = sol.gradients()
    corners = mesh.tets.ravel()
    weights = np.repeat(mesh.volumes, 4)
    total = np.column_stack([
        np.bincount(corners, weights=weights * np.repeat(grads[:, d], 4), minlength=mesh.n_vertices) for d in range(3)
    ])
    volume = np.bincount(corners, weights=weights, minlength=mesh.n_vertices)
    return total / np.maximum(volume, 1e-300)[:, None]


def zz_error(mesh: TetMesh, sol: Solution) -> np.ndarray:
    """
    Recovery-based error indicator per tet.

    eta_t = sqrt(v_t) * |mean of the recovered corner gradients - G_t|, with
    recovery by simple volume-weighted averaging.
    """
    recovered = recovered_gradients(mesh, sol)[mesh.tets].mean(axis=1)
    return np.sqrt(mesh.volumes) * np.linalg.norm(recovered - sol.gradients(), axis=1)


def refine(mesh: TetMesh, errors: np.ndarray, threshold: float, boundary: Optional[BoundaryMesh] = None) -> TetMesh:
    """
    Bisect every tet with error >= threshold * max error, conformingly.

    Args:
        mesh (TetMesh): Mesh to refine
        errors (np.ndarray): (T,) non-negative indicators
        threshold (float): Marking fraction of the largest indicator
        boundary (Optional[BoundaryMesh]): When given, new boundary vertices
            are projected onto this surface

    Returns:
        TetMesh: Refined mesh, or `mesh` itself when nothing is marked
    """
    errors = np.asarray(errors, dtype=float)
    if len(errors) != mesh.n_tets:
        raise ValueError(f"expected {mesh.n_tets} errors, got {len(errors)}")
    peak = float(errors.max()) if len(errors) else 0.0
    if peak <= 0.0:
        return mesh
    marked = errors >= threshold * peak
    if not marked.any():
        return mesh

    result = bisect_tets(mesh.vertices, mesh.tets, marked)
    vertices = result.vertices
    if boundary is not None and result.n_new_vertices:
        refined = TetMesh(vertices, result.tets)
        fresh = np.nonzero(refined.boundary_vertex_mask[mesh.n_vertices:])[0] + mesh.n_vertices
        if len(fresh):
            vertices = snap_vertices(vertices, result.tets, fresh, boundary.project_to_boundary(vertices[fresh]))

    refined = TetMesh(vertices, result.tets)
    worst = float(min_dihedral_angles(refined).min())
    if worst < QUALITY_COLLAPSE_DEG:
        logger.warning(f"Minimum dihedral angle fell to {worst:.3f} degrees after refinement")
        warnings.warn(f"minimum dihedral angle {worst:.3f} degrees", QualityCollapse)
    logger.debug(f"Refined {int(marked.sum())} marked tets: {mesh.n_vertices} -> {refined.n_vertices} vertices")
    return refined


class AdaptiveRefinement:
    """Solve, estimate and refine until the vertex budget is reached"""

    def __init__(self, config: AmrConfig, solver: Callable[[TetMesh, PoissonProblem], Solution] = solve_problem,
                 snap_boundary: bool = True, timer: Optional[StageTimer] = None):
        self.config = config
        self.solver = solver
        self.snap_boundary = snap_boundary
        self.timer = timer or StageTimer()
        self.history: List[Dict[str, float]] = []

    def _record(self, iteration: int, mesh: TetMesh, errors: np.ndarray, sol: Solution,
                prob: PoissonProblem, probe_points: Optional[np.ndarray]) -> None:
        row = {
            "iteration": iteration,
            "vertices": mesh.n_vertices,
            "tets": mesh.n_tets,
            "max_eta": float(errors.max()),
            "mean_eta": float(errors.mean()),
            "re_l2": np.nan,
        }
        if prob.exact is not None:
            points = mesh.vertices if probe_points is None else probe_points
            values = sol.values if probe_points is None else sol
            row["re_l2"] = relative_error(values, prob.exact, points, NormKind.L2)
        self.history.append(row)

    def run(self, prob: PoissonProblem, coarse: TetMesh, probe_points: Optional[np.ndarray] = None) -> Tuple[TetMesh, Solution]:
        """
        Run the refinement loop from a coarse mesh.

        Args:
            prob (PoissonProblem): Problem to solve
            coarse (TetMesh): Initial mesh of the domain
            probe_points (Optional[np.ndarray]): Points for the telemetry
                error when the problem has an exact solution

        Returns:
            Tuple[TetMesh, Solution]: Final mesh and its solution
        """
        self.history = []
        boundary = prob.mesh if self.snap_boundary else None
        mesh = coarse
        with self.timer.stage("fem"):
            sol = self.solver(mesh, prob)

        iteration = 0
        while True:
            with self.timer.stage("refinement"):
                errors = zz_error(mesh, sol)
            self._record(iteration, mesh, errors, sol, prob, probe_points)
            if mesh.n_vertices >= self.config.vertex_budget or iteration >= self.config.max_iterations:
                break
            with self.timer.stage("refinement"):
                refined = refine(mesh, errors, self.config.threshold, boundary)
            if refined is mesh:
                logger.info(f"AMR stopped at iteration {iteration}: nothing left to mark")
                break
            mesh = refined
            with self.timer.stage("fem"):
                sol = self.solver(mesh, prob)
            iteration += 1

        logger.info(f"AMR for {prob.problem_id}: {coarse.n_vertices} -> {mesh.n_vertices} vertices in {iteration} iterations")
        return mesh, sol

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=["iteration", "vertices", "tets", "max_eta", "mean_eta", "re_l2"])

    def save_history(self, path: str) -> None:
        self.history_frame().to_csv(path, index=False, float_format="%.17g")


def amr_loop(prob: PoissonProblem, coarse: TetMesh, cfg: AmrConfig) -> Tuple[TetMesh, Solution]:
    return AdaptiveRefinement(cfg).run(prob, coarse)
