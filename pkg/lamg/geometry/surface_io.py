import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np

from lamg.exceptions import InvalidMesh
from lamg.geometry.boundary_mesh import BoundaryMesh

logger = logging.getLogger(__name__)

_STL_RECORD = np.dtype([
    ("normal", "<f4", (3,)),
    ("vertices", "<f4", (3, 3)),
    ("attribute", "<u2"),
])


def read_obj(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read vertices and triangles from a Wavefront OBJ file.

    Only `v` and `f` records are used; faces with more than three corners
    are rejected since the loader does not triangulate.
    """
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                corners = [int(p.split("/")[0]) for p in parts[1:]]
                if len(corners) != 3:
                    raise InvalidMesh(f"{path}:{line_number}: only triangular faces are supported")
                # OBJ indices are 1-based; negative indices count from the end
                faces.append([c - 1 if c > 0 else len(vertices) + c for c in corners])
    return np.asarray(vertices, dtype=float), np.asarray(faces, dtype=np.int64)


def write_obj(path: str, mesh: BoundaryMesh) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def read_stl(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read a binary STL file, merging bitwise-identical corner positions"""
    raw = Path(path).read_bytes()
    if len(raw) < 84:
        raise InvalidMesh(f"{path}: truncated STL header")
    count = int(np.frombuffer(raw, dtype="<u4", count=1, offset=80)[0])
    expected = 84 + count * _STL_RECORD.itemsize
    if len(raw) < expected:
        raise InvalidMesh(f"{path}: expected {count} triangles ({expected} bytes), got {len(raw)} bytes")
    records = np.frombuffer(raw, dtype=_STL_RECORD, count=count, offset=84)
    corners = records["vertices"].reshape(-1, 3).astype(float)
    vertices, inverse = np.unique(corners, axis=0, return_inverse=True)
    return vertices, np.asarray(inverse, dtype=np.int64).reshape(-1, 3)


def write_stl(path: str, mesh: BoundaryMesh) -> None:
    records = np.zeros(mesh.n_triangles, dtype=_STL_RECORD)
    corners = mesh.vertices[mesh.triangles]
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    records["normal"] = normals
    records["vertices"] = corners
    with Path(path).open("wb") as f:
        f.write(b"lamg binary stl".ljust(80, b"\0"))
        f.write(np.array([mesh.n_triangles], dtype="<u4").tobytes())
        f.write(records.tobytes())


def load_boundary_mesh(path: str) -> BoundaryMesh:
    """
    Load and validate a boundary mesh from OBJ or binary STL.

    Args:
        path (str): File path; the suffix selects the reader

    Returns:
        BoundaryMesh: Validated mesh in the file's own units

    Raises:
        InvalidMesh: if the file cannot be parsed or the surface is invalid
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        vertices, triangles = read_obj(path)
    elif suffix == ".stl":
        vertices, triangles = read_stl(path)
    else:
        raise ValueError(f"Unsupported boundary mesh format: {suffix}")
    logger.info(f"Loaded {len(triangles)} triangles from {path}")
    return BoundaryMesh(vertices, triangles)
