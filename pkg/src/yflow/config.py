"""Run configuration: dataclasses plus a flat ``section.key = value`` text format.

Blank lines and ``#`` comments are ignored. Unknown keys, duplicate keys and
malformed values raise :class:`ConfigError`, and every field is validated
while parsing so nothing downstream starts on a bad config.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import DatasetSpec
from .objectives import ActionConfig
from .transport import SinkhornConfig
from .velocity import VelocityNetConfig

METHODS = ("yflow", "yflow-sobolev", "yflow-mm", "fm", "cfm", "ot-cfm")
FLOW_MATCHING = ("fm", "cfm", "ot-cfm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetSection:
    hidden_width: int = 256
    hidden_layers: int = 3
    activation: str = "silu"
    time_embed_dim: int = 64
    time_embed_kind: str = "learned-linear"


@dataclass(frozen=True)
class GridSection:
    steps: int = 10

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"grid.steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class OptimSection:
    lr: float = 1e-3
    batch_size: int = 256
    iterations: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("optim.lr must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("optim.batch_size must be >= 2")
        if self.iterations < 0:
            raise ValueError("optim.iterations must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("optim.eps must be positive")


@dataclass(frozen=True)
class FlowSection:
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("flow.sigma must be nonnegative")


@dataclass(frozen=True)
class SeedSection:
    init: int = 42
    data: int = 42
    train: int = 42

    def __post_init__(self):
        for name in ("init", "data", "train"):
            if getattr(self, name) < 0:
                raise ValueError(f"seed.{name} must be nonnegative")


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/default"
    checkpoint_every: int = 0


@dataclass(frozen=True)
class EvalSection:
    samples: int = 2048
    seed: int = 7

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("eval.samples must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    method: str = "yflow"
    data: DatasetSpec = field(default_factory=DatasetSpec)
    net: NetSection = field(default_factory=NetSection)
    action: ActionConfig = field(default_factory=ActionConfig)
    grid: GridSection = field(default_factory=GridSection)
    optim: OptimSection = field(default_factory=OptimSection)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    flow: FlowSection = field(default_factory=FlowSection)
    seed: SeedSection = field(default_factory=SeedSection)
    output: OutputSection = field(default_factory=OutputSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "yflow" and self.action.lambda_sobolev != 0:
            raise ValueError("method yflow has no Jacobian penalty; use yflow-sobolev")
        if self.method == "yflow-sobolev" and not self.action.lambda_sobolev > 0:
            raise ValueError("method yflow-sobolev needs action.lambda_sobolev > 0")
        if self.method == "yflow-mm" and not self.action.has_mm:
            raise ValueError("method yflow-mm needs action.mm_epsilon, mm_gamma1 and mm_gamma2")
        self.velocity_config  # validates the net section against the data width

    @property
    def velocity_config(self) -> VelocityNetConfig:
        return VelocityNetConfig(dim=self.data.dim, **dataclasses.asdict(self.net))

    @property
    def is_flow_matching(self) -> bool:
        return self.method in FLOW_MATCHING

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"action.alpha": 2.0})``."""
        values = _flatten(self)
        for key, value in changes.items():
            if key not in values:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
        return _build(values)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v, k)}\n" for k, v in _flatten(self).items())


_SECTIONS = {k: v for k, v in typing.get_type_hints(RunConfig).items() if k != "method"}
# the dataset seed is always seed.data; it has no key of its own
_DERIVED = {"data.seed"}
_AUTO_KEYS = {"sinkhorn.epsilon"}


def _section_types(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _flatten(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {"method": cfg.method}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            key = f"{name}.{f.name}"
            if key not in _DERIVED:
                out[key] = getattr(section, f.name)
    return out


def _build(values: dict[str, object]) -> RunConfig:
    grouped: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for key, value in values.items():
        if key != "method":
            sec, attr = key.split(".", 1)
            grouped[sec][attr] = value
    grouped["data"]["seed"] = grouped["seed"].get("data", SeedSection.data)
    try:
        sections = {name: cls(**grouped[name]) for name, cls in _SECTIONS.items()}
        return RunConfig(method=values.get("method", "yflow"), **sections)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _known_keys() -> dict[str, object]:
    keys: dict[str, object] = {"method": str}
    for name, cls in _SECTIONS.items():
        for attr, tp in _section_types(cls).items():
            if f"{name}.{attr}" not in _DERIVED:
                keys[f"{name}.{attr}"] = tp
    return keys


def _format(v, key: str = "") -> str:
    if v is None:
        return "auto" if key in _AUTO_KEYS else "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _parse_value(key: str, raw: str, tp):
    args = typing.get_args(tp)
    optional = type(None) in args
    if optional:
        if raw in ("auto", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
    if tp is bool:
        if raw not in ("true", "false"):
            raise ConfigError(f"{key}: expected true or false, got {raw!r}")
        return raw == "true"
    if tp is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if tp is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if typing.get_origin(tp) is tuple:
        try:
            return tuple(float(x) for x in raw.split(","))
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    known = _known_keys()
    seen: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = _parse_value(key, raw, known[key])
    defaults = _flatten(RunConfig())
    defaults.update(seen)
    return _build(defaults)


def load_config(path) -> tuple[RunConfig, str]:
    """Parse a config file; returns the config and the file's exact text."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text), text
