"""Training objectives: velocity-power action, Jacobian penalty, combined losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .integrate import Field, TimeGrid, TrajectoryBatch, integrate
from .transport import SinkhornConfig, sinkhorn_divergence

FD_STEP = 1e-4


@dataclass(frozen=True)
class ActionConfig:
    alpha: float = 0.5
    delta: float = 1e-8
    lambda_sinkhorn: float = 5.0
    lambda_sobolev: float = 0.0
    lambda_energy: float = 1.0
    mm_epsilon: float | None = None
    mm_gamma1: float | None = None
    mm_gamma2: float | None = None
    hutchinson_probes: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        for name in ("lambda_sinkhorn", "lambda_sobolev", "lambda_energy"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        mm = (self.mm_epsilon, self.mm_gamma1, self.mm_gamma2)
        if any(c is None for c in mm) and not all(c is None for c in mm):
            raise ValueError("mm_epsilon, mm_gamma1 and mm_gamma2 must be given together")
        if self.mm_epsilon is not None and not self.mm_epsilon > 0:
            raise ValueError("mm_epsilon must be positive")
        if self.hutchinson_probes < 1:
            raise ValueError("hutchinson_probes must be >= 1")

    @property
    def has_mm(self) -> bool:
        return self.mm_epsilon is not None


class LossTerms(NamedTuple):
    total: Tensor
    action: Tensor | None = None
    sinkhorn: Tensor | None = None
    sobolev: Tensor | None = None


def action_estimate(traj: TrajectoryBatch, alpha: float, delta: float = 1e-8) -> Tensor:
    """(1/N) sum_i sum_k dt_k |v(x_{k-1}^i, t_{k-1})|^alpha, left-endpoint rule."""
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    n = traj.n_particles
    total = None
    for dt, v in zip(traj.grid.steps, traj.velocities):
        term = ad.scale(ad.sum(ad.smooth_norm_power(v, alpha, delta)), float(dt) / n)
        total = term if total is None else ad.add(total, term)
    return total


class Concentration(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def concentration_check(u, alpha: float) -> Concentration:
    """Compare sum u_k^alpha with (sum u_k)^alpha for nonnegative step lengths."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("step lengths must be nonnegative")
    lhs = float(np.sum(u**alpha))
    rhs = float(np.sum(u) ** alpha)
    return Concentration(lhs, rhs, lhs >= rhs - 1e-12)


class Sandwich(NamedTuple):
    lower: float
    middle: float
    upper: float
    holds: bool


def lemma1_bounds_check(weights, norms, alpha: float, m: float, M: float) -> Sandwich:
    """Bounded-density sandwich between density-linear and density-power sums.

    With ``A = sum rho |v|^alpha`` and ``B = sum rho^alpha |v|^alpha`` this
    checks ``M^(alpha-1) A <= B <= m^(alpha-1) A``.
    """
    rho = np.asarray(weights, dtype=np.float64)
    speed = np.asarray(norms, dtype=np.float64) ** alpha
    if not 0 < m <= M:
        raise ValueError(f"need 0 < m <= M, got m={m}, M={M}")
    if np.any(rho < m) or np.any(rho > M):
        raise ValueError("weights must lie in [m, M]")
    a = float(np.sum(rho * speed))
    b = float(np.sum(rho**alpha * speed))
    lower, upper = M ** (alpha - 1) * a, m ** (alpha - 1) * a
    return Sandwich(lower, b, upper, lower <= b + 1e-12 and b <= upper + 1e-12)


def _rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape) * 2.0 - 1.0


def jacobian_probe(velocity: Field, x, t: float, probe: np.ndarray, h: float = FD_STEP) -> Tensor:
    """Per-row |J_x v(x, t) r|^2 from a central directional difference."""
    x = ad.as_tensor(x)
    step = probe * h
    jr = ad.scale(ad.sub(velocity(ad.add(x, step), t), velocity(ad.sub(x, step), t)), 0.5 / h)
    return ad.sum(ad.square(jr), axis=1)


def hutchinson_samples(velocity: Field, x, t: float, probes: int, rng, h: float = FD_STEP) -> np.ndarray:
    """Batch-mean of |J r|^2 for each of ``probes`` Rademacher draws."""
    x = ad.as_tensor(x)
    with ad.no_record():
        return np.array(
            [
                float(np.mean(jacobian_probe(velocity, x, t, _rademacher(rng, x.shape), h).value))
                for _ in range(probes)
            ]
        )


def sobolev_penalty(
    velocity: Field, traj: TrajectoryBatch, probes: int, rng, h: float = FD_STEP
) -> Tensor:
    """Unbiased estimate of the time-integrated E|grad_x v|_F^2 along trajectories."""
    if probes < 1:
        raise ValueError("need at least one probe")
    n = traj.n_particles
    total = None
    for k, dt in enumerate(traj.grid.steps):
        x, t = traj.states[k], float(traj.grid.knots[k])
        for _ in range(probes):
            sq = jacobian_probe(velocity, x, t, _rademacher(rng, x.shape), h)
            term = ad.scale(ad.sum(sq), float(dt) / (n * probes))
            total = term if total is None else ad.add(total, term)
    return total


def total_loss(
    velocity: Field,
    x0,
    target,
    grid: TimeGrid,
    cfg: ActionConfig,
    sinkhorn: SinkhornConfig = SinkhornConfig(),
    rng: np.random.Generator | None = None,
) -> LossTerms:
    """Action + lambda * Sinkhorn divergence (+ Jacobian penalty when enabled)."""
    _check_batches(x0, target)
    traj = integrate(velocity, x0, grid)
    action = action_estimate(traj, cfg.alpha, cfg.delta)
    sk = sinkhorn_divergence(traj.endpoints, target, sinkhorn.epsilon, sinkhorn.iterations)
    total = ad.add(action, ad.scale(sk, cfg.lambda_sinkhorn))
    sob = None
    if cfg.lambda_sobolev > 0:
        if rng is None:
            raise ValueError("the Jacobian penalty needs a random generator")
        sob = sobolev_penalty(velocity, traj, cfg.hutchinson_probes, rng)
        total = ad.add(total, ad.scale(sob, cfg.lambda_sobolev))
    return LossTerms(total, action, sk, sob)


def mm_energy(velocity: Field, traj: TrajectoryBatch, cfg: ActionConfig, rng) -> Tensor:
    """eps^g1 * action + eps^g2 * Jacobian penalty along the trajectories."""
    if not cfg.has_mm:
        raise ValueError("Modica-Mortola constants are not configured")
    action = action_estimate(traj, cfg.alpha, cfg.delta)
    sob = sobolev_penalty(velocity, traj, cfg.hutchinson_probes, rng)
    eps = cfg.mm_epsilon
    return ad.add(ad.scale(action, eps**cfg.mm_gamma1), ad.scale(sob, eps**cfg.mm_gamma2))


def mm_total_loss(
    velocity: Field,
    x0,
    target,
    grid: TimeGrid,
    cfg: ActionConfig,
    sinkhorn: SinkhornConfig = SinkhornConfig(),
    rng: np.random.Generator | None = None,
) -> LossTerms:
    """lambda_E * energy + lambda_S * Sinkhorn divergence."""
    _check_batches(x0, target)
    if rng is None:
        raise ValueError("the energy term needs a random generator")
    traj = integrate(velocity, x0, grid)
    energy = mm_energy(velocity, traj, cfg, rng)
    sk = sinkhorn_divergence(traj.endpoints, target, sinkhorn.epsilon, sinkhorn.iterations)
    total = ad.add(ad.scale(energy, cfg.lambda_energy), ad.scale(sk, cfg.lambda_sinkhorn))
    return LossTerms(total, energy, sk, None)


def _check_batches(x0, target) -> None:
    xs, ys = np.shape(ad.as_tensor(x0).value), np.shape(ad.as_tensor(target).value)
    if len(xs) != 2 or len(ys) != 2 or xs[0] == 0 or ys[0] == 0:
        raise ValueError("source and target batches must be nonempty (n, d) arrays")
    if xs[1] != ys[1]:
        raise ValueError(f"dimension mismatch: source d={xs[1]}, target d={ys[1]}")
