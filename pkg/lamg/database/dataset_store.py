import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.mesher.sizing import SizingField, SizingNormalizer
from lamg.solver.mesh_io import read_tet, write_tet
from lamg.solver.problem import PoissonProblem
from lamg.solver.tet_mesh import TetMesh
from lamg.solver.wos import SampleSet

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["problem_id", "shape", "seed", "stream_key", "n_points", "walks", "truncated_walks", "amr_vertices", "amr_iterations"]


@dataclass
class ProblemRecord:
    problem: PoissonProblem
    shape: str
    samples: SampleSet
    # reference sizes at the sample points, aligned with `samples`
    reference: SizingField
    mesh: Optional[TetMesh] = None
    amr_history: Optional[pd.DataFrame] = None

    @property
    def problem_id(self) -> str:
        return self.problem.problem_id

    def manifest_row(self) -> Dict[str, object]:
        history = self.amr_history
        return {
            "problem_id": self.problem_id,
            "shape": self.shape,
            "seed": self.problem.seed,
            "stream_key": "/".join(str(k) for k in self.problem.stream_key),
            "n_points": self.samples.n,
            "walks": int(self.samples.walks.max()) if self.samples.n else 0,
            "truncated_walks": self.samples.truncated,
            "amr_vertices": self.mesh.n_vertices if self.mesh is not None else None,
            "amr_iterations": int(history["iteration"].max()) if history is not None and len(history) else None,
        }


class DatasetStore:
    """
    Problem corpus on disk, one directory per problem:

        <root>/manifest.csv
        <root>/normalizer.json
        <root>/problems/<problem_id>/problem.json
        <root>/problems/<problem_id>/samples.csv
        <root>/problems/<problem_id>/reference.csv
        <root>/problems/<problem_id>/amr_history.csv
        <root>/problems/<problem_id>/amr_mesh.tet      (optional)
    """

    def __init__(self, root: str, save_meshes: bool = True):
        self.root = Path(root)
        self.save_meshes = save_meshes
        (self.root / "problems").mkdir(parents=True, exist_ok=True)

    def problem_dir(self, problem_id: str) -> Path:
        return self.root / "problems" / problem_id

    def save_record(self, record: ProblemRecord) -> None:
        """
        Persist one problem with its samples and reference field.

        Args:
            record (ProblemRecord): Generated problem
        """
        directory = self.problem_dir(record.problem_id)
        directory.mkdir(parents=True, exist_ok=True)
        payload = {"shape": record.shape, **record.problem.to_dict()}
        (directory / "problem.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        record.samples.to_frame().to_csv(directory / "samples.csv", index=False, float_format="%.17g")
        record.reference.save_csv(str(directory / "reference.csv"))
        if record.amr_history is not None:
            record.amr_history.to_csv(directory / "amr_history.csv", index=False, float_format="%.17g")
        if self.save_meshes and record.mesh is not None:
            write_tet(str(directory / "amr_mesh.tet"), record.mesh)

    def load_record(self, problem_id: str, boundaries: Dict[str, BoundaryMesh]) -> ProblemRecord:
        """
        Load a stored problem.

        Args:
            problem_id (str): Directory name under problems/
            boundaries (Dict[str, BoundaryMesh]): Boundary per shape name

        Returns:
            ProblemRecord: The stored problem, mesh included when saved
        """
        directory = self.problem_dir(problem_id)
        payload = json.loads((directory / "problem.json").read_text(encoding="utf-8"))
        shape = payload["shape"]
        problem = PoissonProblem.from_dict(payload, boundaries[shape])
        samples = SampleSet.from_frame(pd.read_csv(directory / "samples.csv"))
        reference = SizingField.load_csv(str(directory / "reference.csv"))
        history_path = directory / "amr_history.csv"
        mesh_path = directory / "amr_mesh.tet"
        return ProblemRecord(
            problem=problem,
            shape=shape,
            samples=samples,
            reference=reference,
            mesh=read_tet(str(mesh_path)) if mesh_path.exists() else None,
            amr_history=pd.read_csv(history_path) if history_path.exists() else None,
        )

    def write_manifest(self, records: List[ProblemRecord]) -> None:
        frame = pd.DataFrame([r.manifest_row() for r in records], columns=MANIFEST_COLUMNS)
        frame.to_csv(self.root / "manifest.csv", index=False)

    def read_manifest(self) -> pd.DataFrame:
        path = self.root / "manifest.csv"
        if not path.exists():
            return pd.DataFrame(columns=MANIFEST_COLUMNS)
        return pd.read_csv(path)

    def problem_ids(self) -> List[str]:
        return self.read_manifest()["problem_id"].astype(str).tolist()

    def save_normalizer(self, normalizer: SizingNormalizer) -> None:
        normalizer.save(str(self.root / "normalizer.json"))

    def load_normalizer(self) -> SizingNormalizer:
        return SizingNormalizer.load(str(self.root / "normalizer.json"))
