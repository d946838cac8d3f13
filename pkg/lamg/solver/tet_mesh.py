import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from lamg.exceptions import DegenerateElement, InvalidMesh

logger = logging.getLogger(__name__)

# Outward faces of a positively oriented tet (a, b, c, d)
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])

_BARY_TOL = 1e-10


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v0 = vertices[tets[:, 0]]
    e1 = vertices[tets[:, 1]] - v0
    e2 = vertices[tets[:, 2]] - v0
    e3 = vertices[tets[:, 3]] - v0
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


def edge_keys(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Order-independent int64 key of the edge (a, b)"""
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return (lo << 32) | hi


def face_adjacency(tets: np.ndarray) -> np.ndarray:
    """(F, 2) pairs of tets sharing a face"""
    faces = np.sort(tets[:, TET_FACES].reshape(-1, 3), axis=1)
    order = np.lexsort(faces.T[::-1])
    ordered = faces[order]
    shared = np.nonzero(np.all(ordered[1:] == ordered[:-1], axis=1))[0]
    return np.column_stack([order[shared] // 4, order[shared + 1] // 4])


def compact(vertices: np.ndarray, tets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Drop unreferenced vertices and renumber tets"""
    used, inverse = np.unique(tets, return_inverse=True)
    return vertices[used], np.ravel(inverse).reshape(-1, 4)


@dataclass
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    _locator: Optional[cKDTree] = field(default=None, init=False, repr=False)
    _inverse: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _boundary_faces: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64).reshape(-1, 4)
        self.volumes = signed_volumes(self.vertices, self.tets)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    def faces(self) -> np.ndarray:
        """(4T, 3) outward-oriented faces, tet by tet"""
        return self.tets[:, TET_FACES].reshape(-1, 3)

    def boundary_faces(self) -> np.ndarray:
        if self._boundary_faces is None:
            faces = self.faces()
            _, inverse, counts = np.unique(np.sort(faces, axis=1), axis=0, return_inverse=True, return_counts=True)
            self._boundary_faces = faces[counts[np.ravel(inverse)] == 1]
        return self._boundary_faces

    @property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_faces().ravel()] = True
        return mask

    def edges(self) -> np.ndarray:
        """Unique undirected edges as (E, 2), lower index first"""
        pairs = self.tets[:, TET_EDGES].reshape(-1, 2)
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def edge_lengths(self) -> np.ndarray:
        """(T, 6) edge lengths per tet"""
        p = self.vertices[self.tets]
        return np.linalg.norm(p[:, TET_EDGES[:, 0]] - p[:, TET_EDGES[:, 1]], axis=2)

    def equivalent_sizes(self) -> np.ndarray:
        """Edge length of the regular tet with each tet's volume, cbrt(6 sqrt(2) v)"""
        return np.cbrt(6.0 * np.sqrt(2.0) * self.volumes)

    def validate(self, eps_vol: Optional[float] = None) -> None:
        """
        Check positive volumes, conforming faces and a watertight boundary.

        Raises:
            DegenerateElement: if a tet volume is below eps_vol
            InvalidMesh: for non-conforming faces, an open boundary or unused vertices
        """
        if self.n_tets == 0:
            raise InvalidMesh("mesh has no tetrahedra")
        if eps_vol is None:
            eps_vol = 1e-14 * self.bbox_diagonal ** 3
        bad = np.nonzero(self.volumes < eps_vol)[0]
        if len(bad):
            raise DegenerateElement(f"{len(bad)} tets below volume {eps_vol:.3g}, first {bad[0]} with volume {self.volumes[bad[0]]:.3g}")

        _, counts = np.unique(np.sort(self.faces(), axis=1), axis=0, return_counts=True)
        if np.any(counts > 2):
            raise InvalidMesh(f"{int(np.sum(counts > 2))} faces shared by more than two tets")

        boundary = self.boundary_faces()
        edges = np.sort(np.concatenate([boundary[:, [0, 1]], boundary[:, [1, 2]], boundary[:, [2, 0]]]), axis=1)
        _, edge_counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(edge_counts % 2):
            raise InvalidMesh("boundary surface is not closed")

        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.tets.ravel()] = True
        if not used.all():
            raise InvalidMesh(f"{int((~used).sum())} unreferenced vertices")

    def _ensure_locator(self) -> None:
        if self._locator is None:
            p = self.vertices[self.tets]
            frame = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
            self._inverse = np.linalg.inv(frame)
            self._locator = cKDTree(self.centroids)

    def barycentric(self, points: np.ndarray, tet_index: np.ndarray) -> np.ndarray:
        """(P, 4) barycentric coordinates of points in the given tets"""
        self._ensure_locator()
        origin = self.vertices[self.tets[tet_index, 0]]
        lam = np.einsum("pij,pj->pi", self._inverse[tet_index], points - origin)
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, points: np.ndarray, candidates: int = 24, exhaustive: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        Containing tet and barycentric coordinates for each point.

        Candidate tets are the nearest centroids; points they miss fall back
        to a scan over every tet. Unlocated points get index -1.

        Args:
            points (np.ndarray): (P, 3) query points
            candidates (int): Nearest centroids tested first
            exhaustive (bool): Skip the spatial index and scan every tet

        Returns:
            Tuple[np.ndarray, np.ndarray]: (P,) tet indices and (P, 4) coordinates
        """
        self._ensure_locator()
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        found = np.full(len(pts), -1, dtype=np.int64)
        tol = -_BARY_TOL

        if not exhaustive:
            k = min(candidates, self.n_tets)
            _, nearest = self._locator.query(pts, k=k)
            nearest = np.asarray(nearest).reshape(len(pts), k)
            for column in range(k):
                pending = np.nonzero(found < 0)[0]
                if len(pending) == 0:
                    break
                tets = nearest[pending, column]
                inside = self.barycentric(pts[pending], tets).min(axis=1) >= tol
                found[pending[inside]] = tets[inside]

        pending = np.nonzero(found < 0)[0]
        if len(pending):
            step = max(1, 2_000_000 // max(1, self.n_tets))
            all_tets = np.arange(self.n_tets)
            for start in range(0, len(pending), step):
                chunk = pending[start:start + step]
                origin = self.vertices[self.tets[:, 0]]
                lam = np.einsum("tij,ptj->pti", self._inverse, pts[chunk, None, :] - origin[None])
                min_lam = np.minimum(1.0 - lam.sum(axis=2), lam.min(axis=2))
                hit = min_lam >= tol
                has_hit = hit.any(axis=1)
                first = np.argmax(hit, axis=1)
                found[chunk[has_hit]] = all_tets[first[has_hit]]

        bary = np.zeros((len(pts), 4))
        ok = found >= 0
        if np.any(ok):
            bary[ok] = self.barycentric(pts[ok], found[ok])
        return found, bary


def dihedral_angles(mesh: TetMesh) -> np.ndarray:
    """(T, 6) interior dihedral angles in degrees"""
    p = mesh.vertices[mesh.tets]
    faces = p[:, TET_FACES]
    normals = np.cross(faces[:, :, 1] - faces[:, :, 0], faces[:, :, 2] - faces[:, :, 0])
    normals /= np.linalg.norm(normals, axis=2, keepdims=True)
    angles = []
    for i in range(4):
        for j in range(i + 1, 4):
            cosine = np.clip(-np.einsum("ij,ij->i", normals[:, i], normals[:, j]), -1.0, 1.0)
            angles.append(np.degrees(np.arccos(cosine)))
    return np.stack(angles, axis=1)


def min_dihedral_angles(mesh: TetMesh) -> np.ndarray:
    return dihedral_angles(mesh).min(axis=1)
