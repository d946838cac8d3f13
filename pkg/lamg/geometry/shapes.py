from typing import Dict, Tuple

import numpy as np

from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.geometry.surface_io import load_boundary_mesh
from lamg.models.config_models import ShapeKind, ShapeSpec

_BOX_TRIANGLES = np.array([
    [0, 2, 3], [0, 3, 1],  # z = lo
    [4, 5, 7], [4, 7, 6],  # z = hi
    [0, 1, 5], [0, 5, 4],  # y = lo
    [2, 6, 7], [2, 7, 3],  # y = hi
    [0, 4, 6], [0, 6, 2],  # x = lo
    [1, 3, 7], [1, 7, 5],  # x = hi
])


def make_box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> BoundaryMesh:
    """Axis-aligned box as 12 outward-facing triangles"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    corners = np.array([[(hi if (i >> axis) & 1 else lo)[axis] for axis in range(3)] for i in range(8)])
    return BoundaryMesh(corners, _BOX_TRIANGLES)


def make_cube(size: float = 1.0) -> BoundaryMesh:
    half = 0.5 * size
    return make_box((-half, -half, -half), (half, half, half))


def make_slab(thickness: float = 0.05, extent: float = 1.0) -> BoundaryMesh:
    half = 0.5 * extent
    return make_box((-half, -half, -0.5 * thickness), (half, half, 0.5 * thickness))


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = vertices[triangles[:, 0]], vertices[triangles[:, 1]], vertices[triangles[:, 2]]
    volume = np.einsum("ij,ij->i", a, np.cross(b, c)).sum()
    return triangles if volume > 0 else triangles[:, [0, 2, 1]]


def make_icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> BoundaryMesh:
    """
    Sphere approximation by repeated midpoint subdivision of an icosahedron.

    Args:
        radius (float): Sphere radius
        subdivisions (int): Subdivision rounds; triangle count is 20 * 4**subdivisions
        center: Sphere center
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = [
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ]
    vertices = [list(np.asarray(v, dtype=float) / np.linalg.norm(v)) for v in vertices]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    for _ in range(subdivisions):
        midpoints: Dict[Tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in midpoints:
                m = np.asarray(vertices[i]) + np.asarray(vertices[j])
                vertices.append(list(m / np.linalg.norm(m)))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = refined

    points = np.asarray(vertices) * radius + np.asarray(center, dtype=float)
    triangles = np.asarray(faces, dtype=np.int64)
    # orientation is checked about the sphere's own center
    triangles = _orient_outward(points - np.asarray(center, dtype=float), triangles)
    return BoundaryMesh(points, triangles)


def make_torus(major_radius: float = 1.0, minor_radius: float = 0.35, n_major: int = 48, n_minor: int = 16) -> BoundaryMesh:
    """Torus around the z axis, hole centered at the origin"""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major_radius + minor_radius * np.cos(vv)
    points = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor_radius * np.sin(vv)], axis=-1).reshape(-1, 3)

    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i, j = i.ravel(), j.ravel()
    p00 = i * n_minor + j
    p10 = ((i + 1) % n_major) * n_minor + j
    p01 = i * n_minor + (j + 1) % n_minor
    p11 = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    triangles = np.concatenate([np.stack([p00, p10, p11], axis=1), np.stack([p00, p11, p01], axis=1)])
    return BoundaryMesh(points, _orient_outward(points, triangles))


def boundary_from_spec(spec: ShapeSpec) -> BoundaryMesh:
    """Build or load the boundary a shape entry describes; `size` is its outer extent"""
    kind = ShapeKind(spec.kind)
    if kind == ShapeKind.CUBE:
        return make_cube(spec.size)
    if kind == ShapeKind.SPHERE:
        return make_icosphere(0.5 * spec.size, subdivisions=3)
    if kind == ShapeKind.TORUS:
        return make_torus(0.37 * spec.size, 0.13 * spec.size)
    if kind == ShapeKind.SLAB:
        return make_slab(0.05 * spec.size, spec.size)
    return load_boundary_mesh(spec.path)
