"""Adam training loop shared by Y-flows and the flow-matching baselines."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .baselines import cfm_loss, make_pairs
from .config import RunConfig, parse_config
from .datasets import make_samplers, stream_rng
from .diagnostics import lipschitz_probe
from .integrate import NonFiniteError, uniform_grid
from .objectives import LossTerms, mm_total_loss, total_loss
from .velocity import VelocityNet

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "total", "action", "sinkhorn", "sobolev")
EMA_DECAY = 0.99


class Adam:
    def __init__(self, shapes, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


@dataclass
class TrainResult:
    net: VelocityNet
    history: list[tuple] = field(default_factory=list)
    stats: dict[str, float] = field(default_factory=dict)
    out_dir: Path | None = None


def loss_terms(config: RunConfig, net: VelocityNet, x0, y, rng) -> LossTerms:
    """The configured objective on one pair of mini-batches."""
    if config.is_flow_matching:
        from .baselines import METHOD_COUPLING

        sigma = 0.0 if config.method == "fm" else config.flow.sigma
        pairs = make_pairs(x0, y, METHOD_COUPLING[config.method], rng)
        return LossTerms(cfm_loss(net, pairs, sigma, rng))
    grid = uniform_grid(config.grid.steps)
    if config.method == "yflow-mm":
        return mm_total_loss(net, x0, y, grid, config.action, config.sinkhorn, rng)
    return total_loss(net, x0, y, grid, config.action, config.sinkhorn, rng)


def _value(t) -> float | None:
    return None if t is None else float(t.value)


def _fmt(v) -> str:
    return "" if v is None else repr(v)


def train(config: RunConfig, out_dir=None, config_text: str | None = None) -> TrainResult:
    """Fit a velocity net; writes config, loss CSV, checkpoints and a summary.

    Batches for iteration ``i`` are draw ``i`` of the data samplers, and the
    per-iteration generator (pairing, bridge times, probes) is seeded from
    ``(seed.train, i)``, so a run is a pure function of its config.
    """
    canonical = config.to_text()
    if out_dir is None:
        out_dir = config.output.dir
    out = Path(out_dir) if out_dir is not None else None
    source, target, _ = make_samplers(config.data, config.seed.data)
    if source.dim != config.data.dim or target.dim != config.data.dim:
        raise ValueError(f"data width {source.dim} does not match data.dim = {config.data.dim}")
    net = VelocityNet.initialize(config.velocity_config, config.seed.init)
    params = net.arrays()
    opt = Adam([p.shape for p in params], config.optim.lr, config.optim.beta1, config.optim.beta2, config.optim.eps)
    result = TrainResult(net, out_dir=out)

    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(canonical if config_text is None else config_text, encoding="utf-8")
        fh = (out / "loss.csv").open("w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)

    stats: dict[str, float] = {}
    B = config.optim.batch_size
    try:
        for i in range(1, config.optim.iterations + 1):
            x0 = source.sample(B, draw=i).points
            y = target.sample(B, draw=i).points
            rng = stream_rng(config.seed.train, i)
            tape = ad.Tape()
            live = VelocityNet(net.config, [tape.watch(p) for p in params])
            try:
                terms = loss_terms(config, live, x0, y, rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"iteration {i}: {exc}", step=i) from None
            row = (i, *(_value(t) for t in terms))
            if not np.isfinite(row[1]):
                raise NonFiniteError(f"non-finite loss at iteration {i}", step=i)
            grads = tape.gradient(terms.total, live.params)
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteError(f"non-finite gradient at iteration {i}", step=i)
            params = opt.step(params, grads)
            net = VelocityNet(net.config, params)
            _update_stats(stats, row)
            result.history.append(row)
            if writer is not None:
                writer.writerow([row[0], *(_fmt(v) for v in row[1:])])
            every = config.output.checkpoint_every
            if out is not None and every > 0 and i % every == 0 and i < config.optim.iterations:
                fh.flush()
                ckpt_io.save(out / f"ckpt_{i:06d}.bin", ckpt_io.Checkpoint(canonical, i, params, dict(stats)))
            if i % 500 == 0:
                log.info("iteration %d  total %.6g", i, row[1])
    finally:
        if fh is not None:
            fh.close()

    result.net, result.stats = net, stats
    if out is not None:
        ckpt_io.save(out / "final.bin", ckpt_io.Checkpoint(canonical, config.optim.iterations, params, dict(stats)))
        _write_summary(out / "summary.json", config, net, stats, source, target)
    return result


def _update_stats(stats: dict[str, float], row) -> None:
    _, total, action, sinkhorn, sobolev = row
    if "first_total" not in stats:
        stats["first_total"] = total
        if sinkhorn is not None:
            stats["first_sinkhorn"] = sinkhorn
        stats["ema_total"] = total
        stats["min_total"] = total
    stats["last_total"] = total
    stats["ema_total"] = EMA_DECAY * stats["ema_total"] + (1.0 - EMA_DECAY) * total
    stats["min_total"] = min(stats["min_total"], total)
    if sinkhorn is not None:
        stats["last_sinkhorn"] = sinkhorn
    if action is not None:
        stats["last_action"] = action


def _write_summary(path: Path, config, net, stats, source, target) -> None:
    pts = np.vstack([source.sample(512, draw=0).points, target.sample(512, draw=0).points])
    bound = lipschitz_probe(net, pts.min(axis=0), pts.max(axis=0), t=0.5, pairs=1000, seed=config.eval.seed)
    summary = {
        "method": config.method,
        "iterations": config.optim.iterations,
        "stats": stats,
        "lipschitz_estimate": bound,
    }
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_run(path) -> tuple[RunConfig, VelocityNet, ckpt_io.Checkpoint]:
    """Config, network and raw record from a checkpoint file."""
    ck = ckpt_io.load(path)
    config = parse_config(ck.config_text)
    return config, VelocityNet(config.velocity_config, ck.params), ck
