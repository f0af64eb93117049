"""Sampling, trajectory export and distribution metrics for trained fields."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .datasets import make_samplers, stream_rng
from .integrate import TrajectoryBatch, integrate, uniform_grid
from .transport import (
    SinkhornConfig,
    auto_epsilon,
    exact_wasserstein,
    median_bandwidth,
    rbf_mmd,
    sinkhorn_divergence,
)

MAX_EVAL_POINTS = 2048


def source_points(config, n: int, seed: int) -> np.ndarray:
    """``n`` source draws from the run's dataset under an explicit seed."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    source = make_samplers(config.data, seed)[0]
    return source.sample(n, draw=0).points


def target_points(config, n: int, seed: int) -> np.ndarray:
    return make_samplers(config.data, seed)[1].sample(n, draw=0).points


def rollout(net, x0, steps: int) -> TrajectoryBatch:
    """Euler trajectories over ``steps`` equal steps on [0, 1], off the tape."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] != net.config.dim:
        raise ValueError(f"source points have shape {x0.shape}; the field expects d = {net.config.dim}")
    return integrate(net, x0, uniform_grid(steps), record_tape=False)


def sample_endpoints(net, x0, steps: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    if len(x0) == 0:
        return np.zeros((0, net.config.dim))
    return rollout(net, x0, steps).endpoints.value


def trajectory_rows(net, x0, steps: int) -> np.ndarray:
    """Rows (particle, k, t_k, x_1..x_d, |v(x_k, t_k)|) in (particle, k) order."""
    x0 = np.asarray(x0, dtype=np.float64)
    n, d = len(x0), net.config.dim
    if n == 0:
        return np.zeros((0, d + 4))
    traj = rollout(net, x0, steps)
    pos = traj.positions
    with ad.no_record():
        last = net(ad.Tensor(pos[:, -1]), float(traj.grid.end)).value
    vel = np.concatenate([traj.velocity_array, last[:, None, :]], axis=1)
    speed = np.linalg.norm(vel, axis=2)
    K1 = steps + 1
    rows = np.empty((n * K1, d + 4))
    rows[:, 0] = np.repeat(np.arange(n), K1)
    rows[:, 1] = np.tile(np.arange(K1), n)
    rows[:, 2] = np.tile(traj.grid.knots, n)
    rows[:, 3 : 3 + d] = pos.reshape(n * K1, d)
    rows[:, 3 + d] = speed.reshape(n * K1)
    return rows


def canonical_rows(X) -> np.ndarray:
    """Rows sorted lexicographically, making metrics blind to sample order."""
    X = np.asarray(X, dtype=np.float64)
    return X[np.lexsort(X.T[::-1])] if len(X) else X


def subsample(X, k: int, seed: int) -> np.ndarray:
    X = canonical_rows(X)
    if len(X) <= k:
        return X
    idx = np.sort(stream_rng(seed).choice(len(X), size=k, replace=False))
    return X[idx]


def distribution_metrics(
    generated,
    target,
    seed: int = 0,
    max_points: int = MAX_EVAL_POINTS,
    sinkhorn: SinkhornConfig = SinkhornConfig(),
) -> dict:
    """Exact W1 and W2, RBF-MMD and Sinkhorn divergence between two samples."""
    n = min(len(generated), len(target), max_points)
    if n < 2:
        raise ValueError("metrics need at least two points per side")
    X = subsample(generated, n, seed)
    Y = subsample(target, n, seed + 1)
    eps = auto_epsilon(X, Y) if sinkhorn.epsilon is None else sinkhorn.epsilon
    with ad.no_record():
        sk = float(sinkhorn_divergence(X, Y, eps, sinkhorn.iterations).value)
    return {
        "W1": exact_wasserstein(X, Y, p=1),
        "W2": exact_wasserstein(X, Y, p=2),
        "MMD": rbf_mmd(X, Y),
        "sinkhorn": sk,
        "settings": {
            "points": n,
            "subsample_seed": seed,
            "mmd_bandwidth": median_bandwidth(X, Y),
            "sinkhorn_epsilon": eps,
            "sinkhorn_iterations": sinkhorn.iterations,
        },
    }


def evaluate(config, net, target, steps: int, seed: int | None = None) -> dict:
    """Metrics of the field's K'-step samples against ``target``."""
    seed = config.eval.seed if seed is None else seed
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != net.config.dim:
        raise ValueError(f"target has shape {target.shape}; the field expects d = {net.config.dim}")
    n = min(len(target), config.eval.samples)
    gen = sample_endpoints(net, source_points(config, n, seed), steps)
    metrics = distribution_metrics(gen, target, seed, min(n, MAX_EVAL_POINTS), config.sinkhorn)
    metrics["settings"].update({"steps": steps, "source_seed": seed, "generated": n, "target_rows": len(target)})
    return metrics
