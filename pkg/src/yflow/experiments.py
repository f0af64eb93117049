"""The synthetic branching study: matched Y-flow and flow-matching runs.

Finished runs are reused when the stored checkpoint carries the same config
text and the training code has the same fingerprint, so the study script and
the acceptance tests can share one set of long runs.
"""
from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import RunConfig, parse_config
from .diagnostics import displacement_profile, mean_curvature, trunk_statistic
from .evaluation import distribution_metrics, rollout, source_points, target_points
from .training import train
from .velocity import VelocityNet

log = logging.getLogger(__name__)

# modules whose code determines a trained checkpoint
TRAINING_MODULES = (
    "autodiff", "baselines", "checkpoint", "config", "datasets",
    "integrate", "objectives", "training", "transport", "velocity",
)
STUDY_SEEDS = (42, 43, 44)


def code_fingerprint() -> str:
    h = hashlib.sha256()
    here = Path(__file__).parent
    for name in TRAINING_MODULES:
        h.update((here / f"{name}.py").read_bytes())
    return h.hexdigest()


def train_cached(config: RunConfig, out_dir) -> VelocityNet:
    """Train into ``out_dir`` unless a matching finished run is already there."""
    out = Path(out_dir)
    final, stamp = out / "final.bin", out / "fingerprint.txt"
    fp = code_fingerprint()
    if final.exists() and stamp.exists() and stamp.read_text().strip() == fp:
        ck = ckpt_io.load(final)
        if ck.config_text == config.to_text():
            log.info("reusing %s", out)
            return VelocityNet(parse_config(ck.config_text).velocity_config, ck.params)
    log.info("training %s into %s", config.method, out)
    result = train(config, out)
    stamp.write_text(fp + "\n")
    return result.net


def branching_config(method: str, seed: int, alpha: float = 0.5, iterations: int = 10000) -> RunConfig:
    """Two-branch task with the default recipe; one seed for init, data and training."""
    return RunConfig().replace(
        **{
            "method": method,
            "action.alpha": alpha,
            "optim.iterations": iterations,
            "seed.init": seed,
            "seed.data": seed,
            "seed.train": seed,
        }
    )


def run_name(method: str, seed: int, alpha: float = 0.5) -> str:
    return f"{method}-s{seed}" if method != "yflow" else f"yflow-a{alpha:g}-s{seed}"


def few_step_w1(config: RunConfig, net: VelocityNet, steps=(2, 10)) -> dict[int, float]:
    """Endpoint W1 to a held-out target sample for each step count."""
    n = config.eval.samples
    x0 = source_points(config, n, config.eval.seed)
    target = target_points(config, n, config.eval.seed)
    out = {}
    for k in steps:
        gen = rollout(net, x0, k).endpoints.value
        out[k] = distribution_metrics(gen, target, config.eval.seed, n, config.sinkhorn)["W1"]
    return out


def trajectory_stats(config: RunConfig, net: VelocityNet, n: int = 512) -> dict:
    """Trunk statistic at t = 0.2 and 0.3, curvature and displacement profile."""
    x0 = source_points(config, n, config.eval.seed)
    traj = rollout(net, x0, config.grid.steps)
    pos, knots = traj.positions, traj.grid.knots
    return {
        "trunk_t0.2": trunk_statistic(pos, knots, 0.2),
        "trunk_t0.3": trunk_statistic(pos, knots, 0.3),
        "curvature": mean_curvature(pos),
        "displacement": displacement_profile(pos).tolist(),
    }


def run_study(root, seeds=STUDY_SEEDS, iterations: int = 10000, collapse_seeds=STUDY_SEEDS[:1]) -> dict:
    """Y-flow (alpha 0.5) and FM on every seed, alpha 2 on ``collapse_seeds``."""
    root = Path(root)
    report: dict = {"runs": {}}
    plan = [("yflow", s, 0.5) for s in seeds] + [("fm", s, 0.5) for s in seeds]
    plan += [("yflow", s, 2.0) for s in collapse_seeds]
    for method, seed, alpha in plan:
        cfg = branching_config(method, seed, alpha, iterations)
        name = run_name(method, seed, alpha)
        net = train_cached(cfg, root / name)
        entry = trajectory_stats(cfg, net)
        entry["W1"] = {str(k): v for k, v in few_step_w1(cfg, net).items()}
        report["runs"][name] = entry
    return report

