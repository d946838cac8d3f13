import logging
from typing import Tuple

import numpy as np

from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.mesher.sizing import SizingField
from lamg.nnet.graph import GraphBatch, build_graph
from lamg.nnet.network import NetParams, forward
from lamg.solver.wos import SampleSet

logger = logging.getLogger(__name__)


class SizingPredictor:
    """Turns Monte Carlo samples into a physical sizing field with a trained network"""

    def __init__(self, params: NetParams, k: int = 8):
        if params.normalizer is None:
            raise ValueError("parameters carry no size normalization")
        self.params = params
        self.k = k

    def predict_normalized(self, graph: GraphBatch) -> np.ndarray:
        """Network output clipped to [0, 1]; isolated nodes get the corpus mean"""
        pred = np.clip(forward(self.params, graph), 0.0, 1.0)
        isolated = graph.isolated
        if isolated.any():
            pred[isolated] = self.params.fallback_size
        return pred

    def predict(self, samples: SampleSet, boundary: BoundaryMesh) -> Tuple[SizingField, GraphBatch]:
        """
        Predict sizes at the sample points.

        Returns:
            Tuple[SizingField, GraphBatch]: Physical sizing field and the graph used
        """
        k = min(self.k, samples.n - 1)
        graph = build_graph(samples, boundary, k)
        sizes = self.params.normalizer.denormalize(self.predict_normalized(graph))
        logger.debug(f"Predicted sizes in [{sizes.min():.4g}, {sizes.max():.4g}] at {samples.n} points")
        return SizingField(samples.points, sizes), graph
