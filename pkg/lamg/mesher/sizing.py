import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from lamg.exceptions import DegenerateRange
from lamg.solver.tet_mesh import TetMesh

logger = logging.getLogger(__name__)

SIZING_COLUMNS = ["x", "y", "z", "s"]
IDW_NEIGHBORS = 8
IDW_POWER = 2.0


def equivalent_edge(volume: np.ndarray) -> np.ndarray:
    """Edge of the regular tet with the given volume: cbrt(6 * sqrt(2) * v)"""
    return np.cbrt(6.0 * np.sqrt(2.0) * np.asarray(volume, dtype=float))


@dataclass
class SizingNormalizer:
    """Corpus-level affine map of sizes onto [0, 1]"""
    s_min: float
    s_max: float

    @property
    def degenerate(self) -> bool:
        return self.s_max - self.s_min < 1e-12

    @classmethod
    def fit(cls, sizes: np.ndarray) -> "SizingNormalizer":
        sizes = np.asarray(sizes, dtype=float)
        if sizes.size == 0:
            raise ValueError("cannot fit a normalizer on no sizes")
        return cls(float(sizes.min()), float(sizes.max()))

    def normalize(self, sizes: np.ndarray) -> np.ndarray:
        sizes = np.asarray(sizes, dtype=float)
        if self.degenerate:
            warnings.warn(f"size range [{self.s_min:.3g}, {self.s_max:.3g}] is degenerate, normalizing to 0.5", DegenerateRange)
            logger.warning(f"Degenerate size range {self.s_max - self.s_min:.3g}, using constant 0.5")
            return np.full(sizes.shape, 0.5)
        return (sizes - self.s_min) / (self.s_max - self.s_min)

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return self.s_min + np.asarray(values, dtype=float) * (self.s_max - self.s_min)

    def to_dict(self) -> Dict[str, float]:
        return {"s_min": self.s_min, "s_max": self.s_max}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "SizingNormalizer":
        return cls(float(data["s_min"]), float(data["s_max"]))

    def save(self, path: str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str) -> "SizingNormalizer":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SizingField:
    """
    Scattered sizes with inverse-distance interpolation.

    `base_sizes` are kept as given; `sizes` applies the accumulated eta so
    repeated scaling composes exactly. A field with a `normalizer` holds
    normalized sizes in [0, 1].
    """
    points: np.ndarray
    base_sizes: np.ndarray
    eta: float = 1.0
    normalizer: Optional[SizingNormalizer] = None
    _tree: Optional[cKDTree] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.base_sizes = np.asarray(self.base_sizes, dtype=float).ravel()
        if len(self.points) != len(self.base_sizes):
            raise ValueError("one size per point is required")

    @property
    def sizes(self) -> np.ndarray:
        return self.base_sizes * self.eta

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def is_normalized(self) -> bool:
        return self.normalizer is not None

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x": self.points[:, 0], "y": self.points[:, 1], "z": self.points[:, 2], "s": self.sizes,
        }, columns=SIZING_COLUMNS)

    def save_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def load_csv(cls, path: str) -> "SizingField":
        frame = pd.read_csv(path)
        return cls(frame[["x", "y", "z"]].to_numpy(), frame["s"].to_numpy())


def reference_field(mesh: TetMesh, points: np.ndarray) -> SizingField:
    """
    Reference size at each point from the volume of its containing tet.

    Points outside the mesh are dropped and reported.

    Args:
        mesh (TetMesh): Typically an AMR output mesh
        points (np.ndarray): (n, 3) sample points

    Returns:
        SizingField: Field over the located points
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    tets, _ = mesh.locate(points)
    located = tets >= 0
    if not located.all():
        logger.warning(f"Dropped {int((~located).sum())} of {len(points)} points outside the mesh")
    return SizingField(points[located], equivalent_edge(mesh.volumes[tets[located]]))


def normalize(sizing: SizingField, normalizer: Optional[SizingNormalizer] = None) -> SizingField:
    """Map sizes to [0, 1]; the normalizer is fitted on this field when not given"""
    if sizing.n == 0:
        raise ValueError("cannot normalize an empty field")
    if normalizer is None:
        normalizer = SizingNormalizer.fit(sizing.sizes)
    return SizingField(sizing.points, normalizer.normalize(sizing.sizes), normalizer=normalizer)


def denormalize(sizing: SizingField, normalizer: Optional[SizingNormalizer] = None) -> SizingField:
    normalizer = normalizer or sizing.normalizer
    if normalizer is None:
        raise ValueError("field carries no normalization parameters")
    return SizingField(sizing.points, normalizer.denormalize(sizing.sizes))


def scale(sizing: SizingField, eta: float) -> SizingField:
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    return replace(sizing, eta=sizing.eta * eta)


def interpolate_sizes(sizing: SizingField, points: np.ndarray, k: int = IDW_NEIGHBORS, power: float = IDW_POWER) -> np.ndarray:
    """
    Shepard interpolation over the k nearest field points.

    Points that coincide with a field point take its size exactly.
    """
    if sizing.n == 0:
        raise ValueError("cannot interpolate an empty field")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = min(k, sizing.n)
    dist, idx = sizing.tree().query(pts, k=k)
    dist = np.asarray(dist).reshape(len(pts), k)
    idx = np.asarray(idx).reshape(len(pts), k)
    values = sizing.sizes[idx]

    exact = dist[:, 0] <= 1e-14
    out = np.empty(len(pts))
    out[exact] = values[exact, 0]
    rest = ~exact
    if np.any(rest):
        weights = dist[rest] ** -power
        out[rest] = np.sum(weights * values[rest], axis=1) / np.sum(weights, axis=1)
    return out


def interpolate_size(sizing: SizingField, x: np.ndarray) -> float:
    return float(interpolate_sizes(sizing, np.reshape(x, (1, 3)))[0])
