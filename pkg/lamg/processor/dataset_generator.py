import logging
from typing import Dict, List, Optional

import numpy as np

from lamg.database.dataset_store import DatasetStore, ProblemRecord
from lamg.exceptions import LamgError
from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.geometry.shapes import boundary_from_spec
from lamg.mesher.amr import AdaptiveRefinement
from lamg.mesher.lattice_mesher import LatticeMesher
from lamg.mesher.sizing import SizingNormalizer, reference_field
from lamg.models.config_models import ExperimentConfig, ShapeSpec, WosConfig
from lamg.nnet.graph import build_graph
from lamg.nnet.trainer import TrainingExample
from lamg.solver.problem import random_problem
from lamg.solver.tet_mesh import TetMesh
from lamg.solver.wos import SampleSet, solve_sparse
from lamg.utils.rng import Rng

logger = logging.getLogger(__name__)

_LOW_ACCEPTANCE = 0.05


def load_boundaries(cfg: ExperimentConfig) -> Dict[str, BoundaryMesh]:
    return {spec.name: boundary_from_spec(spec) for spec in cfg.shapes}


class DatasetGenerator:
    def __init__(self, cfg: ExperimentConfig, store: Optional[DatasetStore] = None, mesher: Optional[LatticeMesher] = None):
        """
        Initialize the dataset generator

        Args:
            cfg (ExperimentConfig): Shapes, sampling ranges and AMR settings
            store (Optional[DatasetStore]): Where records are persisted, if anywhere
            mesher (Optional[LatticeMesher]): Mesher for the coarse AMR seeds
        """
        self.cfg = cfg
        self.store = store
        self.mesher = mesher or LatticeMesher(cfg.mesher)
        self.boundaries = load_boundaries(cfg)
        self._coarse: Dict[str, TetMesh] = {}

    def coarse_mesh(self, shape: str) -> TetMesh:
        """Uniform seed mesh near the configured vertex count, built once per shape"""
        if shape not in self._coarse:
            self._coarse[shape] = self.mesher.for_vertex_count(self.boundaries[shape], self.cfg.coarse_vertices)
        return self._coarse[shape]

    def acceptance_rates(self, n_candidates: int = 10_000) -> Dict[str, float]:
        """Share of bounding-box candidates inside each domain, drawn from a fixed stream"""
        rates = {}
        for position, (name, boundary) in enumerate(self.boundaries.items()):
            rates[name] = boundary.acceptance_rate(Rng(0).child(position), n_candidates)
            if rates[name] < _LOW_ACCEPTANCE:
                logger.warning(f"Shape {name} fills {100.0 * rates[name]:.2f}% of its bounding box; interior sampling will be slow")
            else:
                logger.debug(f"Shape {name} acceptance rate {rates[name]:.3f}")
        return rates

    def generate_one(self, spec: ShapeSpec, index: int, rng: Rng) -> ProblemRecord:
        """
        Draw one problem and manufacture its supervision.

        Args:
            spec (ShapeSpec): Shape of the domain
            index (int): Problem index within the corpus
            rng (Rng): Stream for this problem

        Returns:
            ProblemRecord: Problem, Monte Carlo samples and reference sizes
        """
        boundary = self.boundaries[spec.name]
        ranges = self.cfg.ranges
        problem = random_problem(boundary, ranges, rng, problem_id=f"{spec.name}-{index:04d}")
        generator = rng.generator()
        n = int(generator.integers(ranges.n_points[0], ranges.n_points[1] + 1))
        m = int(generator.integers(ranges.walks[0], ranges.walks[1] + 1))
        wos_cfg = WosConfig(shell_eps=self.cfg.wos.shell_eps, max_steps=self.cfg.wos.max_steps, m=m)
        samples = solve_sparse(problem, n, wos_cfg, rng, workers=self.cfg.workers)

        amr = AdaptiveRefinement(self.cfg.training_amr)
        mesh, _ = amr.run(problem, self.coarse_mesh(spec.name))

        located, _ = mesh.locate(samples.points)
        keep = located >= 0
        if not keep.all():
            logger.warning(f"{problem.problem_id}: {int((~keep).sum())} samples outside the AMR mesh were dropped")
            samples = SampleSet(samples.points[keep], samples.values[keep], samples.variances[keep], samples.walks[keep], samples.truncated)
        reference = reference_field(mesh, samples.points)
        return ProblemRecord(problem, spec.name, samples, reference, mesh, amr.history_frame())

    def generate(self, rng: Rng) -> List[ProblemRecord]:
        """
        Generate the corpus, shapes taken round-robin.

        Failed problems are logged and skipped.

        Args:
            rng (Rng): Corpus stream; problem i uses rng.child(i)

        Returns:
            List[ProblemRecord]: Successfully generated problems
        """
        records = []
        shapes = self.cfg.shapes
        self.acceptance_rates()
        for index in range(self.cfg.n_problems):
            spec = shapes[index % len(shapes)]
            try:
                record = self.generate_one(spec, index, rng.child(index))
            except LamgError as e:
                logger.error(f"Error generating problem {index} on {spec.name}: {str(e)}")
                continue
            if self.store is not None:
                self.store.save_record(record)
            records.append(record)
            logger.info(f"Generated {record.problem_id}: {record.samples.n} samples, AMR mesh {record.mesh.n_vertices} vertices")

        if self.store is not None:
            self.store.write_manifest(records)
        logger.info(f"Generated {len(records)} of {self.cfg.n_problems} problems")
        return records


def gen_dataset(cfg: ExperimentConfig, rng: Rng, store: Optional[DatasetStore] = None) -> List[ProblemRecord]:
    return DatasetGenerator(cfg, store).generate(rng)


def corpus_sizes(records: List[ProblemRecord]) -> np.ndarray:
    return np.concatenate([r.reference.sizes for r in records]) if records else np.empty(0)


def training_examples(records: List[ProblemRecord], normalizer: SizingNormalizer, k: int = 8) -> List[TrainingExample]:
    """Graphs over each problem's samples with normalized reference sizes as targets"""
    examples = []
    for record in records:
        try:
            graph = build_graph(record.samples, record.problem.mesh, min(k, record.samples.n - 1))
        except ValueError as e:
            logger.error(f"Error building the graph of {record.problem_id}: {str(e)}")
            continue
        examples.append(TrainingExample(graph, normalizer.normalize(record.reference.sizes), record.problem_id))
    return examples
