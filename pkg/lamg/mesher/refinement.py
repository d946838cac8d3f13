import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from lamg.exceptions import MeshingFailed
from lamg.solver.tet_mesh import TET_EDGES, edge_keys, signed_volumes

logger = logging.getLogger(__name__)

_LOW_MASK = np.int64(0xFFFFFFFF)


@dataclass
class BisectionResult:
    vertices: np.ndarray
    tets: np.ndarray
    # endpoints of the edge each new vertex bisects, in creation order
    parents: np.ndarray

    @property
    def n_new_vertices(self) -> int:
        return len(self.parents)


def _contains(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    if len(sorted_keys) == 0:
        return np.zeros(keys.shape, dtype=bool)
    pos = np.minimum(np.searchsorted(sorted_keys, keys), len(sorted_keys) - 1)
    return sorted_keys[pos] == keys


def longest_edges(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """
    Local index (0..5) of each tet's longest edge.

    Lengths equal to within 1e-12 relative are tied and resolved toward the
    smallest global edge key, so neighbours sharing tied edges agree.
    """
    p = vertices[tets]
    lengths = np.linalg.norm(p[:, TET_EDGES[:, 0]] - p[:, TET_EDGES[:, 1]], axis=2)
    keys = edge_keys(tets[:, TET_EDGES[:, 0]], tets[:, TET_EDGES[:, 1]])
    tied = lengths >= lengths.max(axis=1, keepdims=True) * (1.0 - 1e-12)
    return np.argmin(np.where(tied, keys, np.iinfo(np.int64).max), axis=1)


def bisect_tets(vertices: np.ndarray, tets: np.ndarray, marked: np.ndarray, max_rounds: int = 1000) -> BisectionResult:
    """
    Bisect marked tets across their longest edge, then close conformingly.

    Every tet that contains an already split edge is bisected across its own
    longest edge, round after round, until no tet holds a split edge. Child
    tets keep the parent's orientation.

    Args:
        vertices (np.ndarray): (V, 3) positions
        tets (np.ndarray): (T, 4) positively oriented tets
        marked (np.ndarray): (T,) bool mask or index array of tets to bisect
        max_rounds (int): Closure round limit

    Returns:
        BisectionResult: Refined vertices, tets and new-vertex parents

    Raises:
        MeshingFailed: if closure does not settle within max_rounds
    """
    vertices = np.asarray(vertices, dtype=float)
    tets = np.asarray(tets, dtype=np.int64)
    active = np.zeros(len(tets), dtype=bool)
    active[marked] = True

    split_keys = np.empty(0, dtype=np.int64)
    split_mids = np.empty(0, dtype=np.int64)
    parents = []

    for round_index in range(max_rounds):
        if round_index > 0:
            keys = edge_keys(tets[:, TET_EDGES[:, 0]], tets[:, TET_EDGES[:, 1]])
            active = _contains(split_keys, keys).any(axis=1)
        if not active.any():
            break

        selected = tets[active]
        rows = np.arange(len(selected))
        local = longest_edges(vertices, selected)
        ia = TET_EDGES[local, 0]
        ib = TET_EDGES[local, 1]
        key = edge_keys(selected[rows, ia], selected[rows, ib])

        fresh = np.unique(key[~_contains(split_keys, key)])
        if len(fresh):
            lo = fresh >> 32
            hi = fresh & _LOW_MASK
            new_ids = len(vertices) + np.arange(len(fresh))
            vertices = np.vstack([vertices, 0.5 * (vertices[lo] + vertices[hi])])
            parents.append(np.column_stack([lo, hi]))
            split_keys = np.concatenate([split_keys, fresh])
            split_mids = np.concatenate([split_mids, new_ids])
            order = np.argsort(split_keys, kind="stable")
            split_keys, split_mids = split_keys[order], split_mids[order]

        mid = split_mids[np.searchsorted(split_keys, key)]
        first = selected.copy()
        first[rows, ib] = mid
        second = selected.copy()
        second[rows, ia] = mid
        tets = np.vstack([tets[~active], first, second])
    else:
        raise MeshingFailed(f"bisection closure did not settle within {max_rounds} rounds")

    parents = np.vstack(parents) if parents else np.empty((0, 2), dtype=np.int64)
    return BisectionResult(vertices, tets, parents)


def snap_vertices(vertices: np.ndarray, tets: np.ndarray, movers: np.ndarray, targets: np.ndarray,
                  min_volume_ratio: float = 0.1, reference: Optional[np.ndarray] = None, halvings: int = 4) -> np.ndarray:
    """
    Move vertices onto target positions.

    A move that would shrink an incident tet below min_volume_ratio of its
    reference volume is halved, up to `halvings` times, and then abandoned.

    Args:
        vertices (np.ndarray): (V, 3) positions
        tets (np.ndarray): (T, 4) connectivity
        movers (np.ndarray): Indices of the vertices to move
        targets (np.ndarray): (len(movers), 3) destinations
        min_volume_ratio (float): Smallest allowed volume relative to the reference
        reference (Optional[np.ndarray]): (T,) volumes the ratio refers to, current volumes by default
        halvings (int): Step halvings tried before a move is abandoned

    Returns:
        np.ndarray: New (V, 3) positions; the input is not modified
    """
    movers = np.asarray(movers, dtype=np.int64)
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    if len(movers) == 0:
        return vertices
    current = signed_volumes(vertices, tets)
    floor = min_volume_ratio * (current if reference is None else reference)
    start = vertices[movers]
    step = np.ones(len(movers))
    smallest = 0.5 ** halvings

    while True:
        trial = vertices.copy()
        trial[movers] = start + step[:, None] * (targets - start)
        volumes = signed_volumes(trial, tets)
        # only tets this call shrank can block it
        bad = (volumes < floor) & (volumes < current)
        if not bad.any():
            break
        blocked = np.isin(movers, tets[bad].ravel()) & (step > 0)
        if not blocked.any():
            break
        step[blocked] = np.where(step[blocked] > smallest, 0.5 * step[blocked], 0.0)

    stuck = int((step == 0).sum())
    if stuck:
        logger.debug(f"{stuck} of {len(movers)} snaps were blocked by inverting tets")
    return trial
