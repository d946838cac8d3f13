import logging
import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from lamg.exceptions import IsolatedNode
from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.solver.wos import SampleSet

logger = logging.getLogger(__name__)


def standardize(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Zero mean, unit variance; a constant input keeps unit scale"""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    std = float(values.std())
    if std < 1e-12:
        std = 1.0
    return (values - mean) / std, mean, std


@dataclass
class GraphBatch:
    """
    Sample points with standardized values and containment-filtered kNN edges.

    Edges are stored directed in both directions: node `receivers[e]`
    aggregates from node `senders[e]`.
    """
    points: np.ndarray
    values: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    e_max: float
    value_mean: float = 0.0
    value_std: float = 1.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=float).ravel()
        self.senders = np.asarray(self.senders, dtype=np.int64).ravel()
        self.receivers = np.asarray(self.receivers, dtype=np.int64).ravel()
        if len(self.points) != len(self.values):
            raise ValueError("one value per node is required")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return len(self.senders)

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.points[self.receivers] - self.points[self.senders], axis=1)

    @property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.receivers, minlength=self.n)

    @property
    def isolated(self) -> np.ndarray:
        return self.degrees == 0

    def permuted(self, order: np.ndarray) -> "GraphBatch":
        """Same graph with node i of the result being node order[i] of this one"""
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        return GraphBatch(self.points[order], self.values[order], inverse[self.senders], inverse[self.receivers],
                          self.e_max, self.value_mean, self.value_std)


def build_graph(samples: SampleSet, mesh: BoundaryMesh, k: int = 8) -> GraphBatch:
    """
    k-nearest-neighbour graph over the sample points.

    Candidate edges whose segment leaves the domain are dropped; the rest
    are symmetrized.

    Args:
        samples (SampleSet): Points and Monte Carlo values
        mesh (BoundaryMesh): Domain boundary for the containment filter
        k (int): Neighbours per node

    Returns:
        GraphBatch: Graph with standardized values
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if samples.n < k + 1:
        raise ValueError(f"need at least k + 1 = {k + 1} samples, got {samples.n}")
    points = samples.points
    _, neighbours = cKDTree(points).query(points, k=k + 1)
    rows = np.repeat(np.arange(samples.n), k + 1)
    cols = np.asarray(neighbours).ravel()
    candidate = rows != cols
    pairs = np.unique(np.sort(np.column_stack([rows[candidate], cols[candidate]]), axis=1), axis=0)

    keep = mesh.segments_inside(points[pairs[:, 0]], points[pairs[:, 1]])
    pairs = pairs[keep]
    logger.debug(f"Graph: kept {len(pairs)} of {len(keep)} undirected kNN edges")

    senders = np.concatenate([pairs[:, 0], pairs[:, 1]])
    receivers = np.concatenate([pairs[:, 1], pairs[:, 0]])
    lengths = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    e_max = float(lengths.max()) if len(lengths) else 0.0

    z, mean, std = standardize(samples.values)
    graph = GraphBatch(points, z, senders, receivers, e_max, mean, std)
    isolated = int(graph.isolated.sum())
    if isolated:
        logger.warning(f"{isolated} of {graph.n} graph nodes lost every edge to the containment filter")
        warnings.warn(f"{isolated} isolated graph nodes", IsolatedNode)
    return graph
