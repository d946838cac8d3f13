"""
Volume mesh files.

Native ASCII format:

    LAMG-TET 1
    <n_vertices> <n_tets>
    x y z          one line per vertex
    a b c d        one line per tet, 0-based vertex indices

Gmsh `.msh` 2.2 ASCII is supported for nodes and 4-node tetrahedra
(element type 4); other element types are skipped on import.
"""
import logging
from pathlib import Path

import numpy as np

from lamg.exceptions import InvalidMesh
from lamg.solver.tet_mesh import TetMesh, signed_volumes

logger = logging.getLogger(__name__)

TET_MAGIC = "LAMG-TET 1"
_GMSH_TET = 4


def write_tet(path: str, mesh: TetMesh) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        f.write(f"{TET_MAGIC}\n{mesh.n_vertices} {mesh.n_tets}\n")
        np.savetxt(f, mesh.vertices, fmt="%.17g")
        np.savetxt(f, mesh.tets, fmt="%d")


def read_tet(path: str) -> TetMesh:
    with Path(path).open("r", encoding="utf-8") as f:
        magic = f.readline().strip()
        if magic != TET_MAGIC:
            raise InvalidMesh(f"{path}: unknown header {magic!r}")
        n_vertices, n_tets = (int(x) for x in f.readline().split())
        vertices = np.loadtxt(f, max_rows=n_vertices, ndmin=2)
        tets = np.loadtxt(f, max_rows=n_tets, dtype=np.int64, ndmin=2)
    if vertices.shape != (n_vertices, 3) or tets.shape != (n_tets, 4):
        raise InvalidMesh(f"{path}: counts in header do not match the body")
    return TetMesh(vertices, tets)


def write_msh(path: str, mesh: TetMesh) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        f.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        f.write(f"$Nodes\n{mesh.n_vertices}\n")
        for i, v in enumerate(mesh.vertices, start=1):
            f.write(f"{i} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        f.write("$EndNodes\n")
        f.write(f"$Elements\n{mesh.n_tets}\n")
        for i, t in enumerate(mesh.tets + 1, start=1):
            f.write(f"{i} {_GMSH_TET} 2 0 1 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        f.write("$EndElements\n")


def read_msh(path: str) -> TetMesh:
    """
    Import nodes and 4-node tets from a Gmsh 2.2 ASCII file.

    Negatively oriented tets are flipped; unused nodes are dropped.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    node_ids = []
    coords = []
    elements = []
    i = 0
    while i < len(lines):
        token = lines[i].strip()
        if token == "$MeshFormat":
            version = lines[i + 1].split()
            if not version[0].startswith("2.") or version[1] != "0":
                raise InvalidMesh(f"{path}: only ASCII msh 2.x is supported, got {lines[i + 1]!r}")
        elif token == "$Nodes":
            count = int(lines[i + 1])
            for line in lines[i + 2:i + 2 + count]:
                parts = line.split()
                node_ids.append(int(parts[0]))
                coords.append([float(x) for x in parts[1:4]])
            i += 1 + count
        elif token == "$Elements":
            count = int(lines[i + 1])
            for line in lines[i + 2:i + 2 + count]:
                parts = [int(x) for x in line.split()]
                if parts[1] == _GMSH_TET:
                    n_tags = parts[2]
                    elements.append(parts[3 + n_tags:7 + n_tags])
            i += 1 + count
        i += 1

    if not elements:
        raise InvalidMesh(f"{path}: no tetrahedra found")
    lookup = {node: index for index, node in enumerate(node_ids)}
    tets = np.array([[lookup[n] for n in element] for element in elements], dtype=np.int64)
    vertices = np.asarray(coords, dtype=float)

    used, tets = np.unique(tets, return_inverse=True)
    tets = tets.reshape(-1, 4)
    vertices = vertices[used]
    negative = signed_volumes(vertices, tets) < 0
    if np.any(negative):
        logger.info(f"{path}: flipping {int(negative.sum())} negatively oriented tets")
        tets[negative] = tets[negative][:, [0, 2, 1, 3]]
    return TetMesh(vertices, tets)
