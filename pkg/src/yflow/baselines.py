"""Flow-matching baselines: linear bridges regressed onto the constant drift x1 - x0."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .integrate import Field
from .transport import minibatch_ot_coupling

COUPLINGS = ("independent", "ot")
METHOD_COUPLING = {"fm": "independent", "cfm": "independent", "ot-cfm": "ot"}


@dataclass
class BridgeSample:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray  # (n,)
    xt: np.ndarray
    drift: np.ndarray
    sigma: float = 0.0


def make_pairs(X0, X1, mode: str = "independent", rng: np.random.Generator | None = None) -> np.ndarray:
    """Pair two equal-size batches; returns an (n, 2, d) array of (x0, x1)."""
    X0, X1 = np.asarray(X0, dtype=np.float64), np.asarray(X1, dtype=np.float64)
    if X0.shape != X1.shape:
        raise ValueError(f"batches must have equal shape, got {X0.shape} and {X1.shape}")
    if mode == "independent":
        if rng is None:
            raise ValueError("independent pairing needs a random generator")
        perm = rng.permutation(len(X1))
    elif mode == "ot":
        perm = minibatch_ot_coupling(X0, X1)
    else:
        raise ValueError(f"unknown coupling {mode!r}; choose from {COUPLINGS}")
    return np.stack([X0, X1[perm]], axis=1)


def sample_bridge(pairs, sigma: float, rng: np.random.Generator, t=None) -> BridgeSample:
    """x_t = (1 - t) x0 + t x1 + sigma z with t ~ U[0, 1] unless given."""
    pairs = np.asarray(pairs, dtype=np.float64)
    x0, x1 = pairs[:, 0], pairs[:, 1]
    n = len(pairs)
    if t is None:
        t = rng.uniform(0.0, 1.0, size=n)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    if sigma > 0:
        xt = xt + sigma * rng.standard_normal(x0.shape)
    return BridgeSample(x0, x1, t, xt, x1 - x0, sigma)


def cfm_loss(velocity: Field, pairs, sigma: float, rng: np.random.Generator, t=None) -> Tensor:
    """Mean of |v(x_t, t) - (x1 - x0)|^2 over the batch.

    The field is called once with one time per row.
    """
    bridge = sample_bridge(pairs, sigma, rng, t)
    v = velocity(ad.Tensor(bridge.xt), bridge.t)
    return ad.scale(ad.sum(ad.square(ad.sub(v, bridge.drift))), 1.0 / len(bridge.t))


def train_baseline(config, out_dir=None, config_text: str | None = None):
    """Adam training on the flow-matching loss; see :func:`yflow.training.train`."""
    from .training import train

    if config.method not in METHOD_COUPLING:
        raise ValueError(f"{config.method!r} is not a flow-matching method")
    return train(config, out_dir, config_text=config_text)
