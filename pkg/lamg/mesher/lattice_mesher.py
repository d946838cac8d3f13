import itertools
import logging
from typing import Optional, Tuple

import numpy as np

from lamg.exceptions import FieldTooFine, LamgError, MeshingFailed
from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.mesher.refinement import bisect_tets, snap_vertices
from lamg.mesher.sizing import SizingField, interpolate_sizes
from lamg.models.config_models import MesherConfig
from lamg.solver.tet_mesh import TetMesh, compact, face_adjacency, min_dihedral_angles, signed_volumes

logger = logging.getLogger(__name__)

# equivalent regular-tet edge of a Kuhn tet, relative to its cube side
KUHN_EDGE_FACTOR = np.cbrt(np.sqrt(2.0))
_MAX_TETS = 6_000_000
_MAX_PASSES = 64
_GRADATION_SWEEPS = 4
_FIT_ROUNDS = 8
_SNAP_RATIO = 0.1
_FORCED_SNAP_RATIO = 0.01


def _kuhn_corners() -> np.ndarray:
    """(6, 4) cube-corner indices (bit 0 = x, bit 1 = y, bit 2 = z) of the Kuhn tets"""
    unit = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=float)
    tets = []
    for perm in itertools.permutations(range(3)):
        first = 1 << perm[0]
        second = first | (1 << perm[1])
        tet = [0, first, second, 7]
        if signed_volumes(unit, np.array([tet]))[0] < 0:
            tet = [0, second, first, 7]
        tets.append(tet)
    return np.array(tets, dtype=np.int64)


KUHN_CORNERS = _kuhn_corners()


def kuhn_lattice(lo: np.ndarray, hi: np.ndarray, cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Six-tet-per-cube tetrahedralization of a box.

    All cubes share the same main diagonal, so neighbouring cubes conform.

    Args:
        lo (np.ndarray): Box minimum corner
        hi (np.ndarray): Box maximum corner
        cells (np.ndarray): Cube count along x, y and z

    Returns:
        Tuple[np.ndarray, np.ndarray]: vertices (V, 3) and tets (6C, 4)
    """
    nx, ny, nz = (int(c) for c in cells)
    axes = [np.linspace(lo[d], hi[d], n + 1) for d, n in enumerate((nx, ny, nz))]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    stride = np.array([(ny + 1) * (nz + 1), nz + 1, 1], dtype=np.int64)
    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = ci.ravel() * stride[0] + cj.ravel() * stride[1] + ck.ravel() * stride[2]
    corner_offsets = np.array([((c >> 0) & 1) * stride[0] + ((c >> 1) & 1) * stride[1] + ((c >> 2) & 1) * stride[2] for c in range(8)])
    tets = base[:, None, None] + corner_offsets[KUHN_CORNERS][None]
    return vertices, tets.reshape(-1, 4)


def lattice_cells(lo: np.ndarray, hi: np.ndarray, size: float) -> np.ndarray:
    """Cubes per axis so that Kuhn tets have equivalent edge at most `size`"""
    extent = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
    return np.maximum(1, np.ceil(extent * KUHN_EDGE_FACTOR / size - 1e-9)).astype(np.int64)


class LatticeMesher:
    """
    Tetrahedral mesher on a Kuhn background lattice.

    Adaptive meshes start from a lattice at the coarsest requested size and
    bisect every tet whose equivalent edge exceeds the target at its
    centroid. The result is clipped to the domain by centroid containment,
    and its boundary vertices are snapped onto the surface.
    """

    def __init__(self, config: Optional[MesherConfig] = None):
        self.config = config or MesherConfig()

    def _check_size(self, boundary: BoundaryMesh, size: float) -> None:
        floor = self.config.min_size_fraction * boundary.bbox_diagonal
        if size < floor:
            raise FieldTooFine(f"requested size {size:.3g} is below {floor:.3g} ({self.config.min_size_fraction:g} x bbox diagonal)")

    def uniform(self, boundary: BoundaryMesh, size: float) -> TetMesh:
        """
        Mesh the domain with a uniform target size.

        Args:
            boundary (BoundaryMesh): Domain surface
            size (float): Target equivalent edge length

        Returns:
            TetMesh: Valid mesh of the domain

        Raises:
            FieldTooFine: if size is below the memory guard
            MeshingFailed: if no valid mesh could be produced
        """
        if size <= 0 or size >= boundary.bbox_diagonal / 4:
            raise ValueError(f"size must lie in (0, bbox_diagonal / 4), got {size}")
        self._check_size(boundary, size)
        lo, hi = boundary.bbox
        vertices, tets = kuhn_lattice(lo, hi, lattice_cells(lo, hi, size))
        mesh = self._fit_to_boundary(boundary, vertices, tets)
        logger.info(f"Uniform mesh at size {size:.4g}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
        return mesh

    def adaptive(self, boundary: BoundaryMesh, field: SizingField, eta: float = 1.0) -> TetMesh:
        """
        Mesh the domain following eta times an interpolated sizing field.

        Args:
            boundary (BoundaryMesh): Domain surface
            field (SizingField): Physical (not normalized) sizes
            eta (float): Global multiplier on the field

        Returns:
            TetMesh: Valid mesh of the domain

        Raises:
            FieldTooFine: if any requested size is below the memory guard
            MeshingFailed: if refinement or boundary fitting fails
        """
        if field.n == 0:
            raise ValueError("sizing field is empty")
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")
        targets = eta * field.sizes
        self._check_size(boundary, float(targets.min()))

        lo, hi = boundary.bbox
        coarsest = min(float(targets.max()), boundary.bbox_diagonal / 4)
        vertices, tets = kuhn_lattice(lo, hi, lattice_cells(lo, hi, coarsest))

        for pass_index in range(_MAX_PASSES):
            target = self._graded_targets(tets, eta * interpolate_sizes(field, vertices[tets].mean(axis=1)))
            current = np.cbrt(6.0 * np.sqrt(2.0) * signed_volumes(vertices, tets))
            marked = current > target * (1.0 + 1e-9)
            if not marked.any():
                break
            result = bisect_tets(vertices, tets, marked)
            vertices, tets = result.vertices, result.tets
            logger.debug(f"Adaptive pass {pass_index}: bisected {int(marked.sum())} tets, now {len(tets)}")
            if len(tets) > _MAX_TETS:
                raise MeshingFailed(f"adaptive refinement exceeded {_MAX_TETS} tets; field minimum {targets.min():.3g}")
        else:
            raise MeshingFailed(f"adaptive refinement did not settle within {_MAX_PASSES} passes")

        mesh = self._fit_to_boundary(boundary, vertices, tets)
        logger.info(f"Adaptive mesh at eta={eta:g}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
        return mesh

    def for_vertex_count(self, boundary: BoundaryMesh, target_vertices: int, iterations: int = 16) -> TetMesh:
        """Uniform mesh whose vertex count is closest to target, by bisection on log(size)"""
        lo = np.log(2.0 * self.config.min_size_fraction * boundary.bbox_diagonal)
        hi = np.log(0.249 * boundary.bbox_diagonal)
        best = None
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            mesh = self.uniform(boundary, float(np.exp(mid)))
            if best is None or abs(mesh.n_vertices - target_vertices) < abs(best.n_vertices - target_vertices):
                best = mesh
            if mesh.n_vertices == target_vertices:
                break
            if mesh.n_vertices > target_vertices:
                lo = mid
            else:
                hi = mid
        logger.info(f"Coarse mesh: {best.n_vertices} vertices for a target of {target_vertices}")
        return best

    def _graded_targets(self, tets: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Limit the target ratio between face neighbours to the gradation"""
        pairs = face_adjacency(tets)
        grade = self.config.gradation
        for _ in range(_GRADATION_SWEEPS):
            limited = target.copy()
            np.minimum.at(limited, pairs[:, 0], grade * target[pairs[:, 1]])
            np.minimum.at(limited, pairs[:, 1], grade * target[pairs[:, 0]])
            if np.array_equal(limited, target):
                break
            target = limited
        return target

    def _fit_to_boundary(self, boundary: BoundaryMesh, vertices: np.ndarray, tets: np.ndarray) -> TetMesh:
        local = _vertex_sizes(vertices, tets)
        dist, closest, _ = boundary.closest_points(vertices)
        near = np.nonzero((dist > boundary.eps_geo) & (dist < self.config.snap_fraction * local))[0]
        vertices = snap_vertices(vertices, tets, near, closest[near])

        keep = boundary.is_inside(vertices[tets].mean(axis=1))
        if not np.any(keep):
            raise MeshingFailed(f"no lattice tet has its centroid inside the domain (bbox {boundary.bbox[0]} .. {boundary.bbox[1]})")
        local = local[np.unique(tets[keep])]
        vertices, tets = compact(vertices, tets[keep])

        vertices, tets = self._snap_boundary(boundary, vertices, tets, 0.5 * local)
        vertices, tets = compact(vertices, tets)
        mesh = TetMesh(vertices, tets)
        try:
            mesh.validate()
        except LamgError as e:
            bad = mesh.volumes < 1e-14 * mesh.bbox_diagonal ** 3
            region = mesh.centroids[bad][:1] if bad.any() else boundary.bbox[0]
            raise MeshingFailed(f"mesh failed validation near {region}: {e}") from e
        return mesh

    def _snap_boundary(self, boundary: BoundaryMesh, vertices: np.ndarray, tets: np.ndarray,
                       tolerance: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Snap boundary vertices onto the surface until the mesh boundary settles.

        Each round snaps every off-surface boundary vertex, then drops exposed
        slivers and exposed tets holding a vertex that is still outside the
        domain by more than its tolerance. A dropped tet exposes vertices that
        were interior, so rounds repeat until nothing is dropped. Later rounds
        accept flatter tets, which the sliver drop then removes.

        Args:
            boundary (BoundaryMesh): Domain surface
            vertices (np.ndarray): (V, 3) positions
            tets (np.ndarray): (T, 4) tets clipped to the domain
            tolerance (np.ndarray): (V,) allowed distance of each vertex from the surface

        Returns:
            Tuple[np.ndarray, np.ndarray]: Vertices and tets; dropped tets may leave unused vertices
        """
        reference = signed_volumes(vertices, tets)
        for round_index in range(_FIT_ROUNDS):
            ratio = _SNAP_RATIO if round_index < _FIT_ROUNDS // 2 else _FORCED_SNAP_RATIO
            vertices = self._snap_onto(boundary, vertices, tets, reference, ratio)
            drop = self._exposed_rejects(boundary, vertices, tets, tolerance)
            if not drop.any() or drop.all():
                break
            logger.debug(f"Boundary round {round_index}: dropping {int(drop.sum())} exposed tets")
            tets, reference = tets[~drop], reference[~drop]
        else:
            vertices = self._snap_onto(boundary, vertices, tets, reference, _FORCED_SNAP_RATIO)

        on_boundary = np.nonzero(TetMesh(vertices, tets).boundary_vertex_mask)[0]
        dist, _, _ = boundary.closest_points(vertices[on_boundary])
        over = dist > tolerance[on_boundary]
        if over.any():
            logger.warning(f"{int(over.sum())} boundary vertices stay farther than half their size from the surface (max {dist.max():.3g})")
        return vertices, tets

    @staticmethod
    def _snap_onto(boundary: BoundaryMesh, vertices: np.ndarray, tets: np.ndarray,
                   reference: np.ndarray, ratio: float) -> np.ndarray:
        on_boundary = np.nonzero(TetMesh(vertices, tets).boundary_vertex_mask)[0]
        dist, closest, _ = boundary.closest_points(vertices[on_boundary])
        off = dist > boundary.eps_geo
        return snap_vertices(vertices, tets, on_boundary[off], closest[off], min_volume_ratio=ratio, reference=reference)

    def _exposed_rejects(self, boundary: BoundaryMesh, vertices: np.ndarray, tets: np.ndarray,
                         tolerance: np.ndarray) -> np.ndarray:
        """Exposed tets that are slivers or hold a vertex sticking out of the domain"""
        mesh = TetMesh(vertices, tets)
        keys = np.sort(mesh.faces(), axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        exposed = (counts[np.ravel(inverse)] == 1).reshape(-1, 4).any(axis=1)
        sliver = min_dihedral_angles(mesh) < self.config.quality_floor_deg

        on_boundary = np.nonzero(mesh.boundary_vertex_mask)[0]
        dist, _, _ = boundary.closest_points(vertices[on_boundary])
        far = on_boundary[dist > tolerance[on_boundary]]
        sticking_out = np.zeros(len(vertices), dtype=bool)
        if len(far):
            sticking_out[far[~boundary.is_inside(vertices[far])]] = True
        return exposed & (sliver | sticking_out[tets].any(axis=1))


def _vertex_sizes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Mean equivalent edge of the tets around each vertex"""
    sizes = np.cbrt(6.0 * np.sqrt(2.0) * np.abs(signed_volumes(vertices, tets)))
    total = np.bincount(tets.ravel(), weights=np.repeat(sizes, 4), minlength=len(vertices))
    count = np.bincount(tets.ravel(), minlength=len(vertices))
    return total / np.maximum(count, 1)


_default_mesher = LatticeMesher()


def mesh_uniform(boundary: BoundaryMesh, size: float, config: Optional[MesherConfig] = None) -> TetMesh:
    return (LatticeMesher(config) if config else _default_mesher).uniform(boundary, size)


def mesh_adaptive(boundary: BoundaryMesh, field: SizingField, eta: float = 1.0, config: Optional[MesherConfig] = None) -> TetMesh:
    return (LatticeMesher(config) if config else _default_mesher).adaptive(boundary, field, eta)

