"""Time-conditioned MLP velocity field v(x, t)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

ACTIVATIONS = {"silu": ad.silu, "tanh": ad.tanh}
TIME_EMBED_KINDS = ("learned-linear", "sinusoidal")


@dataclass(frozen=True)
class VelocityNetConfig:
    dim: int
    hidden_width: int = 256
    hidden_layers: int = 3
    activation: str = "silu"
    time_embed_dim: int = 64
    time_embed_kind: str = "learned-linear"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.hidden_layers < 1:
            raise ValueError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.time_embed_dim < 1:
            raise ValueError(f"time_embed_dim must be >= 1, got {self.time_embed_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.time_embed_kind not in TIME_EMBED_KINDS:
            raise ValueError(f"unknown time embedding {self.time_embed_kind!r}")
        if self.time_embed_kind == "sinusoidal" and self.time_embed_dim % 2:
            raise ValueError("sinusoidal time embedding needs an even width")


def param_shapes(config: VelocityNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every parameter array, in storage order."""
    d, h, e = config.dim, config.hidden_width, config.time_embed_dim
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if config.time_embed_kind == "learned-linear":
        shapes += [("time.weight", (1, e)), ("time.bias", (e,))]
    # the first layer acts on concat(x, embed); stored as one (d + e, h) block
    shapes += [("layer0.weight", (d + e, h)), ("layer0.bias", (h,))]
    for i in range(1, config.hidden_layers):
        shapes += [(f"layer{i}.weight", (h, h)), (f"layer{i}.bias", (h,))]
    shapes += [("head.weight", (h, d)), ("head.bias", (d,))]
    return shapes


def param_count(config: VelocityNetConfig) -> int:
    return int(sum(np.prod(s) for _, s in param_shapes(config)))


def init_params(config: VelocityNetConfig, seed: int) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases; a pure function of ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = []
    for name, shape in param_shapes(config):
        if name.endswith("bias"):
            params.append(np.zeros(shape))
        else:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-bound, bound, size=shape))
    return params


def sinusoidal_frequencies(width: int) -> np.ndarray:
    # top frequency kept small so the embedding varies slowly on [0, 1]
    return np.geomspace(1.0, 50.0, width // 2)


class VelocityNet:
    """MLP velocity field with its parameter arrays (or tape-watched tensors).

    ``net(x, t)`` takes an ``(N, d)`` batch and a time in [0, 1], either one
    scalar for the whole batch or one value per row.
    """

    def __init__(self, config: VelocityNetConfig, params):
        shapes = param_shapes(config)
        if len(params) != len(shapes):
            raise ValueError(f"expected {len(shapes)} parameter arrays, got {len(params)}")
        for (name, shape), p in zip(shapes, params):
            if tuple(np.shape(p.value if isinstance(p, Tensor) else p)) != shape:
                raise ValueError(f"{name}: expected shape {shape}")
        self.config = config
        self.params = list(params)
        self._act = ACTIVATIONS[config.activation]
        self._freqs = sinusoidal_frequencies(config.time_embed_dim)

    @classmethod
    def initialize(cls, config: VelocityNetConfig, seed: int) -> "VelocityNet":
        return cls(config, init_params(config, seed))

    def on_tape(self, tape: Tape) -> "VelocityNet":
        """A copy whose parameters are leaves of ``tape``."""
        return VelocityNet(self.config, [tape.watch(_raw(p)) for p in self.params])

    def arrays(self) -> list[np.ndarray]:
        return [_raw(p) for p in self.params]

    def time_embed(self, t) -> Tensor:
        """Embedding rows: (1, E) for a scalar time, (N, E) for an (N,) array."""
        t = np.asarray(t, dtype=np.float64)
        if t.ndim > 1 or not np.all((t >= 0.0) & (t <= 1.0)):
            raise ValueError(f"time must be a scalar or 1-D array in [0, 1], got {t}")
        col = t.reshape(-1, 1)
        if self.config.time_embed_kind == "sinusoidal":
            phase = col * self._freqs
            return Tensor(np.concatenate([np.sin(phase), np.cos(phase)], axis=1))
        w, b = self.params[0], self.params[1]
        if t.ndim == 0:
            return self._act(ad.add(ad.scale(w, float(t)), b))
        return self._act(ad.add(ad.mul(col, w), b))

    def __call__(self, x, t) -> Tensor:
        x = ad.as_tensor(x)
        cfg = self.config
        if x.ndim != 2 or x.shape[1] != cfg.dim:
            raise ValueError(f"expected input of shape (N, {cfg.dim}), got {x.shape}")
        if np.ndim(t) == 1 and len(t) != x.shape[0]:
            raise ValueError("per-row times must match the batch size")
        offset = 2 if cfg.time_embed_kind == "learned-linear" else 0
        emb = self.time_embed(t)
        w0, b0 = self.params[offset], self.params[offset + 1]
        # concat(x, emb) @ w0 == x @ w0[:d] + emb @ w0[d:]
        wx = ad.take(w0, slice(0, cfg.dim))
        we = ad.take(w0, slice(cfg.dim, None))
        h = self._act(ad.add(ad.rowwise_matmul(x, wx), ad.add(ad.rowwise_matmul(emb, we), b0)))
        idx = offset + 2
        for _ in range(1, cfg.hidden_layers):
            h = self._act(ad.add(ad.rowwise_matmul(h, self.params[idx]), self.params[idx + 1]))
            idx += 2
        return ad.add(ad.rowwise_matmul(h, self.params[idx]), self.params[idx + 1])


def _raw(p) -> np.ndarray:
    return p.value if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
