import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.models.config_models import ProblemRanges
from lamg.utils.rng import Rng, STREAM_PROBLEM

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[np.ndarray], np.ndarray]


@dataclass
class DirichletBC:
    """g(p) = sum_k amplitude_k * exp(-|p - center_k|^2 / (2 width_k^2))"""
    centers: np.ndarray
    amplitudes: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).ravel()
        self.widths = np.asarray(self.widths, dtype=float).ravel()
        if not (len(self.centers) == len(self.amplitudes) == len(self.widths)):
            raise ValueError("centers, amplitudes and widths must have equal lengths")
        if np.any(self.widths <= 0):
            raise ValueError("Gaussian widths must be positive")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if len(self.centers) == 0:
            return np.zeros(len(pts))
        sq = np.sum((pts[:, None, :] - self.centers[None]) ** 2, axis=2)
        return np.exp(-sq / (2.0 * self.widths ** 2)) @ self.amplitudes

    def to_dict(self) -> Dict[str, Any]:
        return {"centers": self.centers.tolist(), "amplitudes": self.amplitudes.tolist(), "widths": self.widths.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DirichletBC":
        return cls(np.asarray(data["centers"]), np.asarray(data["amplitudes"]), np.asarray(data["widths"]))


@dataclass
class SourceTerm:
    """f(y) = sum_k amplitude_k * [|y - center_k| <= radius_k]"""
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=float).ravel()
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).ravel()
        if not (len(self.centers) == len(self.radii) == len(self.amplitudes)):
            raise ValueError("centers, radii and amplitudes must have equal lengths")
        if np.any(self.radii <= 0):
            raise ValueError("sphere radii must be positive")

    @property
    def is_zero(self) -> bool:
        return len(self.radii) == 0 or not np.any(self.amplitudes)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if len(self.radii) == 0:
            return np.zeros(len(pts))
        dist = np.linalg.norm(pts[:, None, :] - self.centers[None], axis=2)
        return (dist <= self.radii[None]).astype(float) @ self.amplitudes

    @classmethod
    def constant(cls, value: float, mesh: BoundaryMesh) -> "SourceTerm":
        """A single sphere that swallows the whole domain"""
        center = 0.5 * (mesh.bbox[0] + mesh.bbox[1])
        return cls(center[None], [2.0 * mesh.bbox_diagonal], [value])

    def to_dict(self) -> Dict[str, Any]:
        return {"centers": self.centers.tolist(), "radii": self.radii.tolist(), "amplitudes": self.amplitudes.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SourceTerm":
        return cls(np.asarray(data["centers"]), np.asarray(data["radii"]), np.asarray(data["amplitudes"]))


@dataclass
class FunctionBC:
    """Boundary data given by an analytic function of position"""
    fn: ScalarFunction
    name: str = "function"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(points)), dtype=float)


@dataclass
class PoissonProblem:
    """Delta u = f in the domain, u = g on its boundary"""
    mesh: BoundaryMesh
    g: Any
    f: Any = field(default_factory=SourceTerm)
    problem_id: str = "problem"
    seed: Optional[int] = None
    # spawn key of the problem stream under `seed`
    stream_key: Tuple[int, ...] = ()
    # analytic solution, when one is known
    exact: Optional[ScalarFunction] = None

    def rng(self) -> Optional[Rng]:
        """The stream the problem was drawn from, when it was drawn at random"""
        return None if self.seed is None else Rng(self.seed, tuple(self.stream_key))

    def boundary_values(self, points: np.ndarray) -> np.ndarray:
        """g evaluated at the closest boundary points of `points`"""
        return self.g(self.mesh.project_to_boundary(np.atleast_2d(points)))

    def to_dict(self) -> Dict[str, Any]:
        if not isinstance(self.g, DirichletBC) or not isinstance(self.f, SourceTerm):
            raise TypeError("only Gaussian boundary data and sphere sources are serializable")
        return {"problem_id": self.problem_id, "seed": self.seed, "stream_key": list(self.stream_key), "g": self.g.to_dict(), "f": self.f.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], mesh: BoundaryMesh) -> "PoissonProblem":
        return cls(
            mesh=mesh,
            g=DirichletBC.from_dict(data["g"]),
            f=SourceTerm.from_dict(data["f"]),
            problem_id=data["problem_id"],
            seed=data.get("seed"),
            stream_key=tuple(data.get("stream_key", ())),
        )


def random_problem(mesh: BoundaryMesh, ranges: ProblemRanges, rng: Rng, problem_id: str = "problem") -> PoissonProblem:
    """
    Draw Gaussian boundary data and sphere sources within the given ranges.

    Gaussian centers are drawn in the bounding box and projected onto the
    boundary; sphere centers are drawn inside the domain.

    Args:
        mesh (BoundaryMesh): Domain boundary
        ranges (ProblemRanges): Count, amplitude, width and radius ranges
        rng (Rng): Problem stream
        problem_id (str): Identifier stored with the problem

    Returns:
        PoissonProblem: Problem with serializable g and f
    """
    problem_rng = rng.child(STREAM_PROBLEM)
    generator = problem_rng.generator()
    diag = mesh.bbox_diagonal

    n_gauss = int(generator.integers(ranges.gaussians[0], ranges.gaussians[1] + 1))
    raw_centers = generator.uniform(mesh.bbox[0], mesh.bbox[1], size=(n_gauss, 3))
    g = DirichletBC(
        centers=mesh.project_to_boundary(raw_centers),
        amplitudes=generator.uniform(*ranges.gaussian_amplitude, size=n_gauss),
        widths=diag * generator.uniform(*ranges.gaussian_width, size=n_gauss),
    )

    n_spheres = int(generator.integers(ranges.spheres[0], ranges.spheres[1] + 1))
    f = SourceTerm(
        centers=mesh.sample_interior(n_spheres, problem_rng.child(1)) if n_spheres else np.zeros((0, 3)),
        radii=diag * generator.uniform(*ranges.sphere_radius, size=n_spheres),
        amplitudes=generator.uniform(*ranges.sphere_amplitude, size=n_spheres),
    )
    logger.debug(f"Problem {problem_id}: {n_gauss} Gaussians, {n_spheres} sources")
    return PoissonProblem(mesh=mesh, g=g, f=f, problem_id=problem_id, seed=rng.seed, stream_key=rng.key)


def constant_problem(mesh: BoundaryMesh, value: float) -> PoissonProblem:
    def const(p: np.ndarray) -> np.ndarray:
        return np.full(len(p), value)

    return PoissonProblem(mesh, FunctionBC(const, "constant"), problem_id="constant", exact=const)


def linear_problem(mesh: BoundaryMesh, gradient, offset: float = 0.0) -> PoissonProblem:
    gradient = np.asarray(gradient, dtype=float)

    def linear(p: np.ndarray) -> np.ndarray:
        return np.atleast_2d(p) @ gradient + offset

    return PoissonProblem(mesh, FunctionBC(linear, "linear"), problem_id="linear", exact=linear)


def quadratic_problem(mesh: BoundaryMesh) -> PoissonProblem:
    """u = |x|^2, so Delta u = 6"""
    def quadratic(p: np.ndarray) -> np.ndarray:
        return np.sum(np.atleast_2d(p) ** 2, axis=1)

    return PoissonProblem(mesh, FunctionBC(quadratic, "quadratic"), SourceTerm.constant(6.0, mesh), problem_id="quadratic", exact=quadratic)


def corner_singular_problem(mesh: BoundaryMesh, offset: float = 0.05) -> PoissonProblem:
    """
    Harmonic u = 1 / |x - x0| with x0 just beyond the bbox max corner.

    The solution is smooth inside the domain but its gradient grows sharply
    toward that corner.
    """
    pole = mesh.bbox[1] + offset * mesh.bbox_diagonal / np.sqrt(3.0)

    def point_source(p: np.ndarray) -> np.ndarray:
        return 1.0 / np.linalg.norm(np.atleast_2d(p) - pole, axis=1)

    return PoissonProblem(mesh, FunctionBC(point_source, "corner_singular"), problem_id="corner_singular", exact=point_source)
