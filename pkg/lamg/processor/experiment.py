import logging
import zlib
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from lamg.exceptions import LamgError
from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.mesher.amr import AdaptiveRefinement
from lamg.mesher.background_field import export_background_field
from lamg.mesher.lattice_mesher import KUHN_EDGE_FACTOR, LatticeMesher
from lamg.mesher.sizing import reference_field
from lamg.models.config_models import ExperimentConfig, WosConfig
from lamg.models.run_models import MethodTag, RunRecord
from lamg.nnet.network import NetParams
from lamg.nnet.predictor import SizingPredictor
from lamg.processor.dataset_generator import load_boundaries
from lamg.processor.metrics import probe_errors, value_errors
from lamg.solver.fem import Solution, solve_problem
from lamg.solver.problem import PoissonProblem, random_problem
from lamg.solver.tet_mesh import TetMesh
from lamg.solver.wos import SampleSet, estimate_points, solve_sparse
from lamg.utils.cache_manager import CacheManager, content_key
from lamg.utils.rng import STREAM_PROBES, STREAM_SAMPLING, Rng
from lamg.utils.timing import StageTimer

logger = logging.getLogger(__name__)

FemSolver = Callable[[TetMesh, PoissonProblem], Solution]

# probes keep this fraction of the bbox diagonal away from the boundary
PROBE_MARGIN = 0.02


class ExperimentRunner:
    """LAMG inference and the baselines on held-out problems, scored on shared probe points"""

    def __init__(self, cfg: ExperimentConfig, mesher: Optional[LatticeMesher] = None,
                 fem: Optional[FemSolver] = None, cache: Optional[CacheManager] = None,
                 boundaries: Optional[Dict[str, BoundaryMesh]] = None,
                 field_dir: Optional[str] = None):
        """
        Initialize the experiment runner

        Args:
            cfg (ExperimentConfig): Experiment settings
            mesher (Optional[LatticeMesher]): Mesher shared by every method
            fem (Optional[FemSolver]): FEM solve shared by every method
            cache (Optional[CacheManager]): Store for reference solutions
            boundaries (Optional[Dict[str, BoundaryMesh]]): Boundary per shape name
            field_dir (Optional[str]): Where predicted sizing fields are exported as .pos, if anywhere
        """
        self.cfg = cfg
        self.mesher = mesher or LatticeMesher(cfg.mesher)
        self.fem = fem or solve_problem
        self.cache = cache
        self.boundaries = boundaries if boundaries is not None else load_boundaries(cfg)
        self.field_dir = Path(field_dir) if field_dir else None
        self._probes: Dict[str, np.ndarray] = {}
        self._references: Dict[str, np.ndarray] = {}

    def shape_of(self, prob: PoissonProblem) -> str:
        for name, boundary in self.boundaries.items():
            if boundary is prob.mesh:
                return name
        raise ValueError(f"problem {prob.problem_id} is not posed on a configured shape")

    def heldout_problems(self, count: Optional[int] = None) -> List[PoissonProblem]:
        """Evaluation problems drawn from eval_seed, shapes taken round-robin"""
        count = self.cfg.n_eval if count is None else count
        root = Rng(self.cfg.eval_seed)
        shapes = self.cfg.shapes
        problems = []
        for i in range(count):
            spec = shapes[i % len(shapes)]
            problems.append(random_problem(self.boundaries[spec.name], self.cfg.ranges, root.child(i),
                                           problem_id=f"eval-{spec.name}-{i:04d}"))
        return problems

    def problem_rng(self, prob: PoissonProblem) -> Rng:
        return Rng(self.cfg.eval_seed).child(zlib.crc32(prob.problem_id.encode("utf-8")))

    def probe_points(self, prob: PoissonProblem) -> np.ndarray:
        """Fixed interior points per shape, shared by every method"""
        shape = self.shape_of(prob)
        if shape not in self._probes:
            boundary = prob.mesh
            rng = Rng(self.cfg.eval_seed).child(STREAM_PROBES)
            margin = PROBE_MARGIN * boundary.bbox_diagonal
            kept: List[np.ndarray] = []
            n_kept = 0
            attempt = 0
            while n_kept < self.cfg.probe_points:
                candidates = boundary.sample_interior(2 * self.cfg.probe_points, rng.child(attempt))
                distances, _, _ = boundary.closest_points(candidates)
                keep = candidates[distances > margin]
                kept.append(keep)
                n_kept += len(keep)
                attempt += 1
                if attempt > 64:
                    raise LamgError(f"shape {shape} is too thin for a probe margin of {margin:.3g}")
            self._probes[shape] = np.concatenate(kept)[:self.cfg.probe_points]
        return self._probes[shape]

    def uniform_size(self, boundary: BoundaryMesh, target_vertices: int) -> float:
        """Lattice size whose uniform mesh of the domain has about target_vertices vertices"""
        return float(KUHN_EDGE_FACTOR * np.cbrt(abs(boundary.signed_volume()) / target_vertices))

    def reference_values(self, prob: PoissonProblem) -> np.ndarray:
        """
        Reference solution at the probe points.

        The analytic solution when the problem has one, otherwise a
        high-resolution uniform FEM solve, cached by problem content.
        """
        probes = self.probe_points(prob)
        if prob.exact is not None:
            return np.asarray(prob.exact(probes), dtype=float)
        if prob.problem_id in self._references:
            return self._references[prob.problem_id]

        key = None
        try:
            key = content_key("reference", self.shape_of(prob), prob.to_dict(), self.cfg.reference_vertices,
                              self.cfg.probe_points, self.cfg.eval_seed, self.cfg.mesher.model_dump())
        except TypeError:
            logger.debug(f"Reference for {prob.problem_id} is not cacheable")
        if key is not None and self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                self._references[prob.problem_id] = cached["values"]
                return cached["values"]

        mesh = self.mesher.uniform(prob.mesh, self.uniform_size(prob.mesh, self.cfg.reference_vertices))
        values = self.fem(mesh, prob).interpolate_many(probes)
        logger.info(f"Reference for {prob.problem_id} on {mesh.n_vertices} vertices")
        if key is not None and self.cache is not None:
            self.cache.set(key, {"values": values, "vertex_count": np.array(mesh.n_vertices)})
        self._references[prob.problem_id] = values
        return values

    def _score(self, record: RunRecord, prob: PoissonProblem, sol: Solution) -> RunRecord:
        re_l2, re_linf = probe_errors(sol, self.reference_values(prob), self.probe_points(prob))
        return record.model_copy(update={"re_l2": re_l2, "re_linf": re_linf})

    def _wos_config(self, m: int) -> WosConfig:
        return WosConfig(shell_eps=self.cfg.wos.shell_eps, max_steps=self.cfg.wos.max_steps, m=m)

    def run_lamg(self, prob: PoissonProblem, params: NetParams, eta: Optional[float] = None,
                 n: Optional[int] = None, m: Optional[int] = None, rng: Optional[Rng] = None,
                 label: str = "") -> Tuple[Solution, RunRecord]:
        """
        Adaptive FEM with a learned sizing field.

        Samples n interior points, estimates u there with m walks each,
        predicts sizes, meshes at eta times the field and solves once.

        Args:
            prob (PoissonProblem): Problem to solve
            params (NetParams): Trained network with its size normalization
            eta (Optional[float]): Size multiplier, cfg.eta by default
            n (Optional[int]): Sample count, cfg.inference_n by default
            m (Optional[int]): Walks per sample, cfg.inference_m by default
            rng (Optional[Rng]): Sampling stream, derived from the problem id by default
            label (str): Tag stored with the record

        Returns:
            Tuple[Solution, RunRecord]: Solution and its scored record

        Raises:
            MeshingFailed: if the predicted field cannot be meshed
        """
        eta = self.cfg.eta if eta is None else eta
        n = self.cfg.inference_n if n is None else n
        m = self.cfg.inference_m if m is None else m
        rng = rng or self.problem_rng(prob)
        predictor = SizingPredictor(params, k=self.cfg.train.k_neighbors)
        timer = StageTimer()

        with timer.stage("mc"):
            samples = solve_sparse(prob, n, self._wos_config(m), rng, workers=self.cfg.workers)
        with timer.stage("inference"):
            field, _ = predictor.predict(samples, prob.mesh)
        if self.field_dir is not None:
            self.field_dir.mkdir(parents=True, exist_ok=True)
            suffix = f"_{label}" if label else ""
            export_background_field(str(self.field_dir / f"{prob.problem_id}{suffix}.pos"), field, eta)
        with timer.stage("meshing"):
            mesh = self.mesher.adaptive(prob.mesh, field, eta)
        with timer.stage("fem"):
            sol = self.fem(mesh, prob)

        record = RunRecord(
            problem_id=prob.problem_id,
            method=MethodTag.LAMG,
            mc_time=timer.get("mc"),
            inference_time=timer.get("inference"),
            meshing_time=timer.get("meshing"),
            fem_time=timer.get("fem"),
            vertex_count=mesh.n_vertices,
            tet_count=mesh.n_tets,
            eta=eta,
            n_points=n,
            walks=m,
            label=label,
        )
        return sol, self._score(record, prob, sol)

    def run_baseline(self, prob: PoissonProblem, method: MethodTag,
                     vertex_target: Optional[int] = None) -> Tuple[Union[Solution, SampleSet], RunRecord]:
        """
        Run one baseline.

        Args:
            prob (PoissonProblem): Problem to solve
            method (MethodTag): amr, wos, uniform or amg
            vertex_target (Optional[int]): Uniform mesh size, the middle of
                cfg.uniform_sweep by default

        Returns:
            Tuple[Union[Solution, SampleSet], RunRecord]: Mesh solution (or
                the WoS samples) and its scored record
        """
        method = MethodTag(method)
        if method == MethodTag.AMR:
            return self._run_amr(prob)
        if method == MethodTag.WOS:
            return self._run_wos(prob)
        if method == MethodTag.UNIFORM:
            sweep = self.cfg.uniform_sweep
            return self._run_uniform(prob, vertex_target or sweep[len(sweep) // 2])
        if method == MethodTag.AMG:
            return self._run_amg(prob)
        raise ValueError(f"{method.value} is not a baseline")

    def _coarse_mesh(self, prob: PoissonProblem) -> TetMesh:
        return self.mesher.uniform(prob.mesh, self.uniform_size(prob.mesh, self.cfg.coarse_vertices))

    def _run_amr(self, prob: PoissonProblem) -> Tuple[Solution, RunRecord]:
        timer = StageTimer()
        with timer.stage("meshing"):
            coarse = self._coarse_mesh(prob)
        amr = AdaptiveRefinement(self.cfg.baseline_amr, solver=self.fem, timer=timer)
        mesh, sol = amr.run(prob, coarse)
        record = RunRecord(
            problem_id=prob.problem_id,
            method=MethodTag.AMR,
            meshing_time=timer.get("meshing"),
            refinement_time=timer.get("refinement"),
            fem_time=timer.get("fem"),
            vertex_count=mesh.n_vertices,
            tet_count=mesh.n_tets,
        )
        return sol, self._score(record, prob, sol)

    def _run_wos(self, prob: PoissonProblem) -> Tuple[SampleSet, RunRecord]:
        probes = self.probe_points(prob)[:self.cfg.wos_baseline_points]
        reference = self.reference_values(prob)[:len(probes)]
        timer = StageTimer()
        with timer.stage("mc"):
            samples = estimate_points(prob, probes, self._wos_config(self.cfg.wos_baseline_walks),
                                      self.problem_rng(prob), workers=self.cfg.workers)
        re_l2, re_linf = value_errors(samples.values, reference)
        record = RunRecord(
            problem_id=prob.problem_id,
            method=MethodTag.WOS,
            mc_time=timer.get("mc"),
            n_points=len(probes),
            walks=self.cfg.wos_baseline_walks,
            re_l2=re_l2,
            re_linf=re_linf,
        )
        return samples, record

    def _run_uniform(self, prob: PoissonProblem, vertex_target: int) -> Tuple[Solution, RunRecord]:
        timer = StageTimer()
        with timer.stage("meshing"):
            mesh = self.mesher.uniform(prob.mesh, self.uniform_size(prob.mesh, vertex_target))
        with timer.stage("fem"):
            sol = self.fem(mesh, prob)
        record = RunRecord(
            problem_id=prob.problem_id,
            method=MethodTag.UNIFORM,
            meshing_time=timer.get("meshing"),
            fem_time=timer.get("fem"),
            vertex_count=mesh.n_vertices,
            tet_count=mesh.n_tets,
            label=f"N={vertex_target}",
        )
        return sol, self._score(record, prob, sol)

    def _run_amg(self, prob: PoissonProblem) -> Tuple[Solution, RunRecord]:
        """AMR, then a one-shot remesh from the AMR sizes and a single solve"""
        amr_timer = StageTimer()
        with amr_timer.stage("meshing"):
            coarse = self._coarse_mesh(prob)
        amr_mesh, _ = AdaptiveRefinement(self.cfg.baseline_amr, solver=self.fem, timer=amr_timer).run(prob, coarse)

        timer = StageTimer()
        with timer.stage("meshing"):
            points = prob.mesh.sample_interior(self.cfg.inference_n, self.problem_rng(prob).child(STREAM_SAMPLING))
            field = reference_field(amr_mesh, points)
            mesh = self.mesher.adaptive(prob.mesh, field, 1.0)
        with timer.stage("fem"):
            sol = self.fem(mesh, prob)
        record = RunRecord(
            problem_id=prob.problem_id,
            method=MethodTag.AMG,
            refinement_time=amr_timer.total,
            meshing_time=timer.get("meshing"),
            fem_time=timer.get("fem"),
            vertex_count=mesh.n_vertices,
            tet_count=mesh.n_tets,
        )
        return sol, self._score(record, prob, sol)

    def run_uniform_sweep(self, prob: PoissonProblem) -> List[RunRecord]:
        return [self._run_uniform(prob, target)[1] for target in self.cfg.uniform_sweep]

    def run_lamg_sweep(self, prob: PoissonProblem, params: NetParams, sweep: str) -> List[RunRecord]:
        """
        LAMG runs over one swept setting: eta, m (walks) or n (points).

        Every run of a sweep draws from the same problem stream.
        """
        rng = self.problem_rng(prob)
        if sweep == "eta":
            return [self.run_lamg(prob, params, eta=eta, rng=rng, label=f"eta={eta:g}")[1] for eta in self.cfg.eta_sweep]
        if sweep == "m":
            return [self.run_lamg(prob, params, m=m, rng=rng, label=f"m={m}")[1] for m in self.cfg.robustness_m]
        if sweep == "n":
            return [self.run_lamg(prob, params, n=n, rng=rng, label=f"n={n}")[1] for n in self.cfg.robustness_n]
        raise ValueError(f"unknown sweep {sweep!r}, expected eta, m or n")

    def collect(self, problems: Sequence[PoissonProblem],
                run: Callable[[PoissonProblem], List[RunRecord]]) -> Tuple[List[RunRecord], int]:
        """
        Apply `run` to every problem; failures are logged and counted.

        Returns:
            Tuple[List[RunRecord], int]: Records of the successful runs and the failure count
        """
        records: List[RunRecord] = []
        failures = 0
        for prob in problems:
            try:
                produced = run(prob)
            except LamgError as e:
                logger.error(f"Error running {prob.problem_id}: {str(e)}")
                failures += 1
                continue
            records.extend(produced)
            for record in produced:
                logger.info(f"{record.method.value} {record.label} on {prob.problem_id}: RE_L2={record.re_l2:.4g}, "
                            f"{record.total_time:.3f}s, {record.vertex_count} vertices")
        return records, failures
