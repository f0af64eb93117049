"""Fixed-grid ODE integration of dx/dt = v(x, t) with differentiable states."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Field = Callable[[Tensor, float], Tensor]

SCHEMES = ("euler", "midpoint", "rk4")


class NonFiniteError(FloatingPointError):
    """A state or loss stopped being finite; ``step`` names where, if known."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        if knots.ndim != 1 or len(knots) < 2:
            raise ValueError("a time grid needs at least two knots")
        if not np.all(np.isfinite(knots)) or not np.all(np.diff(knots) > 0):
            raise ValueError("time grid knots must be finite and strictly increasing")
        object.__setattr__(self, "knots", knots)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def n_steps(self) -> int:
        return len(self.knots) - 1

    @property
    def start(self) -> float:
        return float(self.knots[0])

    @property
    def end(self) -> float:
        return float(self.knots[-1])

    def split(self, k: int) -> tuple["TimeGrid", "TimeGrid"]:
        """The sub-grids before and after knot ``k``, both containing it."""
        if not 0 < k < self.n_steps:
            raise ValueError(f"split index must be interior, got {k}")
        return TimeGrid(self.knots[: k + 1]), TimeGrid(self.knots[k:])

    def scaled(self, s: float) -> "TimeGrid":
        return TimeGrid(self.knots * s)


def uniform_grid(K: int) -> TimeGrid:
    """K equal steps on [0, 1]."""
    if K < 1:
        raise ValueError(f"need at least one step, got K={K}")
    return TimeGrid(np.linspace(0.0, 1.0, K + 1))


@dataclass
class TrajectoryBatch:
    """Particle states at every knot plus the left-endpoint velocity of each step.

    ``states[k]`` is the ``(N, d)`` batch at ``grid.knots[k]`` and
    ``velocities[k]`` the field evaluated there, for ``k < K``.
    """

    states: list[Tensor]
    velocities: list[Tensor]
    grid: TimeGrid
    scheme: str = field(default="euler")

    @property
    def n_particles(self) -> int:
        return self.states[0].shape[0]

    @property
    def positions(self) -> np.ndarray:
        """States as an (N, K+1, d) array."""
        return np.stack([s.value for s in self.states], axis=1)

    @property
    def velocity_array(self) -> np.ndarray:
        """Step velocities as an (N, K, d) array."""
        return np.stack([v.value for v in self.velocities], axis=1)

    @property
    def endpoints(self) -> Tensor:
        return self.states[-1]


def integrate(
    velocity: Field,
    x0,
    grid: TimeGrid,
    scheme: str = "euler",
    record_tape: bool = True,
) -> TrajectoryBatch:
    """Push ``x0`` through the field along ``grid``.

    With ``record_tape`` every state stays on the parameters' tape, so the loss
    can be differentiated through all steps. Without it nothing is recorded.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    x = ad.as_tensor(x0)
    if not np.all(np.isfinite(x.value)):
        raise NonFiniteError("initial states are not finite", step=0)
    if record_tape:
        return _integrate(velocity, x, grid, scheme)
    with ad.no_record():
        return _integrate(velocity, ad.Tensor(x.value), grid, scheme)


def _integrate(velocity: Field, x: Tensor, grid: TimeGrid, scheme: str) -> TrajectoryBatch:
    states, velocities = [x], []
    knots, steps = grid.knots, grid.steps
    for k in range(grid.n_steps):
        t, dt = float(knots[k]), float(steps[k])
        v = velocity(x, t)
        if scheme == "euler":
            x = ad.add(x, ad.scale(v, dt))
        elif scheme == "midpoint":
            half = min(t + 0.5 * dt, float(knots[k + 1]))
            v2 = velocity(ad.add(x, ad.scale(v, 0.5 * dt)), half)
            x = ad.add(x, ad.scale(v2, dt))
        else:
            half = min(t + 0.5 * dt, float(knots[k + 1]))
            k2 = velocity(ad.add(x, ad.scale(v, 0.5 * dt)), half)
            k3 = velocity(ad.add(x, ad.scale(k2, 0.5 * dt)), half)
            k4 = velocity(ad.add(x, ad.scale(k3, dt)), float(knots[k + 1]))
            incr = ad.add(ad.add(v, ad.scale(k2, 2.0)), ad.add(ad.scale(k3, 2.0), k4))
            x = ad.add(x, ad.scale(incr, dt / 6.0))
        if not np.all(np.isfinite(x.value)):
            raise NonFiniteError(f"non-finite state after step {k + 1}", step=k + 1)
        velocities.append(v)
        states.append(x)
    return TrajectoryBatch(states, velocities, grid, scheme)


def compress_schedule(velocity: Field, grid: TimeGrid, s: float) -> tuple[Field, TimeGrid]:
    """Run the same spatial path on [0, s]: v_s(x, t) = v(x, t / s) / s.

    Returns the wrapped field and the grid scaled onto [0, s]; integrating
    the pair visits exactly the knot states of the original run.
    """
    if not 0.0 < s <= 1.0:
        raise ValueError(f"compression factor must lie in (0, 1], got {s}")

    def compressed(x, t):
        return ad.scale(velocity(x, min(t / s, 1.0)), 1.0 / s)

    return compressed, grid.scaled(s)
