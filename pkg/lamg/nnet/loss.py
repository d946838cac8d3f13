from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit

from lamg.models.config_models import TrainConfig


@dataclass
class LossParts:
    total: float
    l1: float
    l2: float


def huber(diff: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(diff)
    return np.where(a < delta, 0.5 * diff ** 2, delta * (a - 0.5 * delta))


def threshold_weights(pred: np.ndarray, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Sigmoid weights emphasising sizes below s_lo and above s_hi"""
    pred = np.asarray(pred, dtype=float)
    return expit(-(pred - cfg.s_lo) / cfg.beta), expit((pred - cfg.s_hi) / cfg.beta)


def normalized_weights(pred: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """w_p = N * (w_down + w_up) / sum over q, so the weights average to 1"""
    down, up = threshold_weights(pred, cfg)
    raw = down + up
    return len(raw) * raw / raw.sum()


def loss(pred: np.ndarray, ref: np.ndarray, cfg: TrainConfig) -> LossParts:
    """
    Huber term plus alpha times the threshold-weighted squared error.

    Weights are evaluated at the predicted normalized sizes.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError("prediction and reference lengths differ")
    diff = pred - ref
    l1 = float(np.mean(huber(diff, cfg.delta)))
    l2 = float(np.mean(normalized_weights(pred, cfg) * diff ** 2))
    return LossParts(l1 + cfg.alpha * l2, l1, l2)


def loss_gradient(pred: np.ndarray, ref: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """d(total loss) / d(pred), including the dependence of the weights on pred"""
    pred = np.asarray(pred, dtype=float).ravel()
    diff = pred - np.asarray(ref, dtype=float).ravel()
    n = len(pred)
    d_l1 = np.where(np.abs(diff) < cfg.delta, diff, cfg.delta * np.sign(diff)) / n

    down, up = threshold_weights(pred, cfg)
    raw = down + up
    total = raw.sum()
    d_raw = (-down * (1.0 - down) + up * (1.0 - up)) / cfg.beta
    l2 = np.sum(raw * diff ** 2) / total
    d_l2 = (2.0 * raw * diff + d_raw * (diff ** 2 - l2)) / total
    return d_l1 + cfg.alpha * d_l2
