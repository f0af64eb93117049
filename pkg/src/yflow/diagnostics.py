"""Trajectory statistics used to compare branching behavior between runs."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad


def state_at(positions: np.ndarray, knots: np.ndarray, t: float) -> np.ndarray:
    """Particle positions at time ``t``, linear between grid knots."""
    positions = np.asarray(positions, dtype=np.float64)
    knots = np.asarray(knots, dtype=np.float64)
    if not knots[0] <= t <= knots[-1]:
        raise ValueError(f"t={t} lies outside [{knots[0]}, {knots[-1]}]")
    k = int(np.searchsorted(knots, t, side="right")) - 1
    k = min(k, len(knots) - 2)
    w = (t - knots[k]) / (knots[k + 1] - knots[k])
    if w == 0.0:
        return positions[:, k].copy()
    return (1.0 - w) * positions[:, k] + w * positions[:, k + 1]


def trunk_statistic(positions: np.ndarray, knots: np.ndarray, t: float) -> float:
    """Mean pairwise distance between particles at time ``t``.

    Small values early in the flow mean particles travel together.
    """
    return float(np.mean(pdist(state_at(positions, knots, t))))


def displacement_profile(positions: np.ndarray) -> np.ndarray:
    """Mean step length per grid step; sums to the mean path length."""
    steps = np.diff(np.asarray(positions, dtype=np.float64), axis=1)
    return np.linalg.norm(steps, axis=2).mean(axis=0)


def path_lengths(positions: np.ndarray) -> np.ndarray:
    steps = np.diff(np.asarray(positions, dtype=np.float64), axis=1)
    return np.linalg.norm(steps, axis=2).sum(axis=1)


def mean_curvature(positions: np.ndarray) -> float:
    """Mean norm of the discrete second difference x[k+1] - 2 x[k] + x[k-1]."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[1] < 3:
        raise ValueError("curvature needs at least three states per particle")
    second = positions[:, 2:] - 2.0 * positions[:, 1:-1] + positions[:, :-2]
    return float(np.linalg.norm(second, axis=2).mean())


def lipschitz_probe(velocity, lo, hi, t: float = 0.5, pairs: int = 1000, seed: int = 0) -> float:
    """Largest |v(x, t) - v(x', t)| / |x - x'| over random pairs in a box."""
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(lo, hi, size=(pairs, len(lo)))
    xp = rng.uniform(lo, hi, size=(pairs, len(lo)))
    with ad.no_record():
        dv = velocity(ad.Tensor(x), t).value - velocity(ad.Tensor(xp), t).value
    ratio = np.linalg.norm(dv, axis=1) / np.linalg.norm(x - xp, axis=1)
    return float(np.max(ratio))
