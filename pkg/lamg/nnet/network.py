"""
Encoder / message-passing processor / decoder network over a GraphBatch.

Each processor level maps node features through a linear layer, replaces
every channel by its distance-weighted aggregate

    m_i[c] = e_max * sum_j |a_i[c] - a_j[c]| / |x_i - x_j|

and applies a second linear layer with ReLU. Encoder layers use ReLU, the
last decoder layer is linear.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from lamg.exceptions import TrainingDiverged
from lamg.mesher.sizing import SizingNormalizer
from lamg.models.config_models import ModelPreset
from lamg.nnet.graph import GraphBatch

logger = logging.getLogger(__name__)


@dataclass
class NetParams:
    preset: ModelPreset
    weights: "OrderedDict[str, np.ndarray]"
    # corpus statistics travel with the weights
    normalizer: Optional[SizingNormalizer] = None
    fallback_size: float = 0.5

    @classmethod
    def layer_shapes(cls, preset: ModelPreset) -> "OrderedDict[str, Tuple[int, ...]]":
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        for i, (fan_in, fan_out) in enumerate(zip(preset.encoder_dims[:-1], preset.encoder_dims[1:])):
            shapes[f"enc{i}_w"] = (fan_in, fan_out)
            shapes[f"enc{i}_b"] = (fan_out,)
        width = preset.latent_dim
        for level in range(preset.gnn_levels):
            shapes[f"gnn{level}_in_w"] = (width, width)
            shapes[f"gnn{level}_in_b"] = (width,)
            shapes[f"gnn{level}_out_w"] = (width, width)
            shapes[f"gnn{level}_out_b"] = (width,)
        for i, (fan_in, fan_out) in enumerate(zip(preset.decoder_dims[:-1], preset.decoder_dims[1:])):
            shapes[f"dec{i}_w"] = (fan_in, fan_out)
            shapes[f"dec{i}_b"] = (fan_out,)
        return shapes

    @classmethod
    def initialize(cls, preset: ModelPreset, generator: np.random.Generator) -> "NetParams":
        """He-normal weights, zero biases"""
        weights = OrderedDict()
        for name, shape in cls.layer_shapes(preset).items():
            if len(shape) == 2:
                weights[name] = generator.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
            else:
                weights[name] = np.zeros(shape)
        return cls(preset, weights)

    @classmethod
    def zeros(cls, preset: ModelPreset) -> "NetParams":
        return cls(preset, OrderedDict((name, np.zeros(shape)) for name, shape in cls.layer_shapes(preset).items()))

    @property
    def count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))

    def copy(self) -> "NetParams":
        return NetParams(self.preset, OrderedDict((k, v.copy()) for k, v in self.weights.items()),
                         self.normalizer, self.fallback_size)

    def flatten(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights.values()])

    def with_flat(self, flat: np.ndarray) -> "NetParams":
        weights = OrderedDict()
        offset = 0
        for name, w in self.weights.items():
            weights[name] = np.asarray(flat[offset:offset + w.size], dtype=float).reshape(w.shape)
            offset += w.size
        return NetParams(self.preset, weights, self.normalizer, self.fallback_size)


@dataclass
class ForwardCache:
    output: np.ndarray
    # (kind, input, pre-activation, extra) per layer in forward order
    layers: List[Tuple[str, np.ndarray, np.ndarray, Optional[np.ndarray]]] = field(default_factory=list)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _edge_weights(g: GraphBatch) -> np.ndarray:
    if g.n_edges == 0:
        return np.zeros(0)
    return g.e_max / g.edge_lengths


def aggregate(a: np.ndarray, g: GraphBatch, edge_weights: np.ndarray) -> np.ndarray:
    """Per-channel distance-weighted sum of absolute differences to neighbours"""
    out = np.zeros_like(a)
    if g.n_edges:
        np.add.at(out, g.receivers, edge_weights[:, None] * np.abs(a[g.receivers] - a[g.senders]))
    return out


def forward(params: NetParams, g: GraphBatch, keep_cache: bool = False):
    """
    Predicted normalized sizes, one per node.

    Returns:
        np.ndarray: (n,) predictions, or a ForwardCache when keep_cache is set

    Raises:
        TrainingDiverged: if the output is not finite
    """
    w = params.weights
    preset = params.preset
    cache = ForwardCache(output=np.empty(0))
    edge_weights = _edge_weights(g)

    h = g.values[:, None]
    for i in range(len(preset.encoder_dims) - 1):
        pre = h @ w[f"enc{i}_w"] + w[f"enc{i}_b"]
        cache.layers.append(("relu", h, pre, None))
        h = _relu(pre)

    for level in range(preset.gnn_levels):
        a = h @ w[f"gnn{level}_in_w"] + w[f"gnn{level}_in_b"]
        cache.layers.append(("linear", h, a, None))
        m = aggregate(a, g, edge_weights)
        cache.layers.append(("message", a, m, edge_weights))
        pre = m @ w[f"gnn{level}_out_w"] + w[f"gnn{level}_out_b"]
        cache.layers.append(("relu", m, pre, None))
        h = _relu(pre)

    n_dec = len(preset.decoder_dims) - 1
    for i in range(n_dec):
        pre = h @ w[f"dec{i}_w"] + w[f"dec{i}_b"]
        last = i == n_dec - 1
        cache.layers.append(("linear" if last else "relu", h, pre, None))
        h = pre if last else _relu(pre)

    out = h[:, 0]
    if not np.all(np.isfinite(out)):
        raise TrainingDiverged("network produced non-finite sizes")
    cache.output = out
    return cache if keep_cache else out


def _layer_names(preset: ModelPreset) -> List[Optional[str]]:
    """Parameter prefix of each cached layer; None for the message step"""
    names: List[Optional[str]] = [f"enc{i}" for i in range(len(preset.encoder_dims) - 1)]
    for level in range(preset.gnn_levels):
        names += [f"gnn{level}_in", None, f"gnn{level}_out"]
    names += [f"dec{i}" for i in range(len(preset.decoder_dims) - 1)]
    return names


def backward(params: NetParams, g: GraphBatch, cache: ForwardCache, d_output: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Reverse-mode gradients of a scalar with respect to every weight.

    The absolute value in the aggregation takes subgradient 0 at 0.

    Args:
        params (NetParams): Weights used in the forward pass
        g (GraphBatch): Graph used in the forward pass
        cache (ForwardCache): Cache from forward(..., keep_cache=True)
        d_output (np.ndarray): (n,) derivative of the scalar w.r.t. outputs

    Returns:
        Dict[str, np.ndarray]: Gradient for each weight name
    """
    grads: Dict[str, np.ndarray] = {}
    delta = np.asarray(d_output, dtype=float)[:, None]
    for name, (kind, x, pre, extra) in zip(reversed(_layer_names(params.preset)), reversed(cache.layers)):
        if kind == "message":
            diff = x[g.receivers] - x[g.senders]
            flow = extra[:, None] * np.sign(diff) * delta[g.receivers]
            upstream = np.zeros_like(x)
            np.add.at(upstream, g.receivers, flow)
            np.add.at(upstream, g.senders, -flow)
            delta = upstream
            continue
        if kind == "relu":
            delta = delta * (pre > 0.0)
        grads[f"{name}_w"] = x.T @ delta
        grads[f"{name}_b"] = delta.sum(axis=0)
        delta = delta @ params.weights[f"{name}_w"].T
    return OrderedDict((k, grads[k]) for k in params.weights)
