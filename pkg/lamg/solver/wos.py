import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from lamg.models.config_models import WosConfig
from lamg.solver.problem import PoissonProblem, SourceTerm
from lamg.utils.rng import Rng, STREAM_SAMPLING, STREAM_WALKS

logger = logging.getLogger(__name__)

SAMPLE_COLUMNS = ["x", "y", "z", "u", "variance", "m"]


@dataclass
class SampleSet:
    points: np.ndarray
    values: np.ndarray
    variances: np.ndarray
    walks: np.ndarray
    truncated: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=float).ravel()
        self.variances = np.asarray(self.variances, dtype=float).ravel()
        self.walks = np.asarray(self.walks, dtype=np.int64).ravel()
        if not (len(self.points) == len(self.values) == len(self.variances) == len(self.walks)):
            raise ValueError("SampleSet arrays must share one length")

    @property
    def n(self) -> int:
        return len(self.points)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x": self.points[:, 0], "y": self.points[:, 1], "z": self.points[:, 2],
            "u": self.values, "variance": self.variances, "m": self.walks,
        }, columns=SAMPLE_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "SampleSet":
        return cls(frame[["x", "y", "z"]].to_numpy(), frame["u"].to_numpy(), frame["variance"].to_numpy(), frame["m"].to_numpy())


def _unit_vectors(generator: np.random.Generator, count: int) -> np.ndarray:
    v = generator.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _green_radius_fraction(u: np.ndarray) -> np.ndarray:
    """Inverse of the radial CDF 3t^2 - 2t^3 of the ball's Green density"""
    return 0.5 - np.sin(np.arcsin(1.0 - 2.0 * u) / 3.0)


def run_walks(prob: PoissonProblem, origins: np.ndarray, cfg: WosConfig, generator: np.random.Generator) -> Tuple[np.ndarray, int]:
    """
    Run one walk from each origin, all walks advanced together.

    Each step jumps to a uniform point on the largest empty sphere around the
    current position and adds -(R^2 / 6) * f(y), with y drawn from the
    normalized Green density of that ball (R^2 / 6 is the Green integral).
    A walk is absorbed into g at its closest boundary point once it is within
    shell_eps of the boundary; after max_steps it is absorbed wherever it is.

    Args:
        prob (PoissonProblem): Problem with Delta u = f
        origins (np.ndarray): (W, 3) interior start points
        cfg (WosConfig): Shell width, step cap
        generator (np.random.Generator): Source of randomness

    Returns:
        Tuple[np.ndarray, int]: (W,) walk values and the number of truncated walks
    """
    mesh = prob.mesh
    eps = cfg.resolved_shell_eps(mesh.bbox_diagonal)
    has_source = not (isinstance(prob.f, SourceTerm) and prob.f.is_zero)

    x = np.array(origins, dtype=float).reshape(-1, 3)
    accumulated = np.zeros(len(x))
    values = np.zeros(len(x))
    active = np.arange(len(x))

    for _ in range(cfg.max_steps):
        if active.size == 0:
            break
        dist, closest, _ = mesh.closest_points(x[active])
        absorbed = dist < eps
        if np.any(absorbed):
            done = active[absorbed]
            values[done] = accumulated[done] + prob.g(closest[absorbed])
            active = active[~absorbed]
            dist = dist[~absorbed]
        if active.size == 0:
            break
        radius = dist
        if has_source:
            fraction = _green_radius_fraction(generator.uniform(size=active.size))
            y = x[active] + (radius * fraction)[:, None] * _unit_vectors(generator, active.size)
            accumulated[active] -= radius ** 2 / 6.0 * prob.f(y)
        x[active] += radius[:, None] * _unit_vectors(generator, active.size)

    truncated = int(active.size)
    if truncated:
        _, closest, _ = mesh.closest_points(x[active])
        values[active] = accumulated[active] + prob.g(closest)
    return values, truncated


def wos_single_walk(prob: PoissonProblem, x: np.ndarray, cfg: WosConfig, rng: Rng) -> float:
    values, _ = run_walks(prob, np.reshape(x, (1, 3)), cfg, rng.generator())
    return float(values[0])


def _estimate(prob: PoissonProblem, x: np.ndarray, cfg: WosConfig, rng: Rng) -> Tuple[float, float, int]:
    origins = np.repeat(np.reshape(np.asarray(x, dtype=float), (1, 3)), cfg.m, axis=0)
    values, truncated = run_walks(prob, origins, cfg, rng.generator())
    variance = float(np.var(values, ddof=1)) if cfg.m > 1 else 0.0
    return float(np.mean(values)), variance, truncated


def estimate(prob: PoissonProblem, x: np.ndarray, cfg: WosConfig, rng: Rng) -> Tuple[float, float]:
    """
    Monte Carlo estimate of u(x) from cfg.m independent walks.

    Returns:
        Tuple[float, float]: Mean and sample variance of the walk values
    """
    mean, variance, _ = _estimate(prob, x, cfg, rng)
    return mean, variance


def estimate_points(prob: PoissonProblem, points: np.ndarray, cfg: WosConfig, rng: Rng, workers: int = 1) -> SampleSet:
    """
    Estimate u at given points, each on its own substream keyed by its index.

    Results do not depend on `workers` or scheduling order.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)

    def task(i: int) -> Tuple[float, float, int]:
        return _estimate(prob, points[i], cfg, rng.child(STREAM_WALKS, i))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(len(points))))
    else:
        results = [task(i) for i in range(len(points))]

    truncated = sum(r[2] for r in results)
    if truncated:
        total = len(points) * cfg.m
        logger.warning(f"{truncated} of {total} walks ({100.0 * truncated / total:.3f}%) hit max_steps={cfg.max_steps}")
    return SampleSet(
        points=points,
        values=[r[0] for r in results],
        variances=[r[1] for r in results],
        walks=np.full(len(points), cfg.m),
        truncated=truncated,
    )


def solve_sparse(prob: PoissonProblem, n: int, cfg: WosConfig, rng: Rng, workers: int = 1) -> SampleSet:
    """
    Sample n interior points and estimate u at each of them.

    Args:
        prob (PoissonProblem): Problem to estimate
        n (int): Number of sample points
        cfg (WosConfig): Walk settings, cfg.m walks per point
        rng (Rng): Root stream; sampling and walks use separate substreams
        workers (int): Thread count

    Returns:
        SampleSet: Points, means, variances and walk counts

    Raises:
        RejectionBudgetExceeded: if interior sampling starves
    """
    points = prob.mesh.sample_interior(n, rng.child(STREAM_SAMPLING))
    samples = estimate_points(prob, points, cfg, rng, workers=workers)
    logger.info(f"WoS estimated {n} points with {cfg.m} walks each for {prob.problem_id}")
    return samples
