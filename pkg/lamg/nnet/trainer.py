import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lamg.exceptions import TrainingDiverged
from lamg.models.config_models import ModelPreset, TrainConfig
from lamg.nnet.graph import GraphBatch
from lamg.nnet.loss import LossParts, loss, loss_gradient
from lamg.nnet.network import NetParams, backward, forward
from lamg.utils.rng import Rng, STREAM_TRAINING

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["epoch", "train_loss", "train_l1", "train_l2", "val_loss"]


@dataclass
class TrainingExample:
    graph: GraphBatch
    # reference sizes in normalized [0, 1] space, one per graph node
    target: np.ndarray
    problem_id: str = ""


def gradients(params: NetParams, g: GraphBatch, ref: np.ndarray, cfg: TrainConfig) -> Tuple[LossParts, Dict[str, np.ndarray]]:
    """Loss and its exact gradient with respect to every weight"""
    cache = forward(params, g, keep_cache=True)
    parts = loss(cache.output, ref, cfg)
    if not np.isfinite(parts.total):
        raise TrainingDiverged(f"loss became {parts.total}")
    return parts, backward(params, g, cache, loss_gradient(cache.output, ref, cfg))


class AdamOptimizer:
    """Per-parameter adaptive steps; beta1 = 0 drops the momentum term"""

    def __init__(self, learning_rate: float, beta1: float = 0.0, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, params: NetParams, grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, grad in grads.items():
            m = self._m.get(name, np.zeros_like(grad))
            v = self._v.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad ** 2
            self._m[name], self._v[name] = m, v
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            params.weights[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class Trainer:
    def __init__(self, cfg: TrainConfig, preset: Optional[ModelPreset] = None):
        """
        Initialize the trainer

        Args:
            cfg (TrainConfig): Loss constants, optimizer and epoch settings
            preset (Optional[ModelPreset]): Layer widths and processor depth
        """
        self.cfg = cfg
        self.preset = preset or ModelPreset()
        self.curve: List[Dict[str, float]] = []

    def _split(self, examples: Sequence[TrainingExample], generator: np.random.Generator) -> Tuple[List[TrainingExample], List[TrainingExample]]:
        order = generator.permutation(len(examples))
        n_val = int(np.floor(self.cfg.validation_fraction * len(examples)))
        if self.cfg.validation_fraction > 0 and n_val == 0 and len(examples) > 1:
            n_val = 1
        val = [examples[i] for i in order[:n_val]]
        train = [examples[i] for i in order[n_val:]]
        return train, val

    def evaluate(self, params: NetParams, examples: Sequence[TrainingExample]) -> LossParts:
        parts = [loss(forward(params, ex.graph), ex.target, self.cfg) for ex in examples]
        total = LossParts(
            float(np.mean([p.total for p in parts])),
            float(np.mean([p.l1 for p in parts])),
            float(np.mean([p.l2 for p in parts])),
        )
        if not np.isfinite(total.total):
            raise TrainingDiverged(f"mean loss became {total.total}")
        return total

    def train(self, examples: Sequence[TrainingExample], rng: Rng) -> NetParams:
        """
        Fit the network, one optimizer step per problem graph.

        Args:
            examples (Sequence[TrainingExample]): Graphs with normalized targets
            rng (Rng): Seeds initialization and the validation split; cfg.shuffle_seed sets the epoch order

        Returns:
            NetParams: Parameters with the lowest validation loss (training
                loss when there is no validation set)

        Raises:
            TrainingDiverged: on non-finite outputs, losses or gradients
        """
        if not examples:
            raise ValueError("no training examples")
        generator = rng.child(STREAM_TRAINING).generator()
        train_set, val_set = self._split(examples, generator)
        params = NetParams.initialize(self.preset, generator)
        shuffler = Rng(self.cfg.shuffle_seed).child(STREAM_TRAINING).generator()
        fallback = float(np.mean(np.concatenate([ex.target for ex in train_set])))
        last_bias = f"dec{len(self.preset.decoder_dims) - 2}_b"
        params.weights[last_bias][:] = fallback
        params.fallback_size = fallback

        optimizer = AdamOptimizer(self.cfg.learning_rate, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
        monitor = val_set or train_set
        best = params.copy()
        best_loss = self.evaluate(params, monitor).total
        self.curve = []
        logger.info(f"Training {params.count} parameters on {len(train_set)} graphs, validating on {len(val_set)}")

        for epoch in range(1, self.cfg.epochs + 1):
            for i in shuffler.permutation(len(train_set)):
                example = train_set[i]
                _, grads = gradients(params, example.graph, example.target, self.cfg)
                if not all(np.all(np.isfinite(gr)) for gr in grads.values()):
                    raise TrainingDiverged(f"non-finite gradient at epoch {epoch} on {example.problem_id}")
                optimizer.step(params, grads)

            train_parts = self.evaluate(params, train_set)
            val_loss = self.evaluate(params, val_set).total if val_set else train_parts.total
            self.curve.append({
                "epoch": epoch, "train_loss": train_parts.total, "train_l1": train_parts.l1,
                "train_l2": train_parts.l2, "val_loss": val_loss,
            })
            if val_loss < best_loss:
                best_loss = val_loss
                best = params.copy()
            if epoch == 1 or epoch % 10 == 0 or epoch == self.cfg.epochs:
                logger.info(f"Epoch {epoch}: train {train_parts.total:.6f}, validation {val_loss:.6f}")

        logger.info(f"Best monitored loss {best_loss:.6f}")
        return best

    def curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.curve, columns=CURVE_COLUMNS)

    def save_curve(self, path: str) -> None:
        self.curve_frame().to_csv(path, index=False, float_format="%.17g")


def train(examples: Sequence[TrainingExample], cfg: TrainConfig, rng: Rng, preset: Optional[ModelPreset] = None) -> NetParams:
    return Trainer(cfg, preset).train(examples, rng)

