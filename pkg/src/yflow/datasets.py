"""Synthetic branch mixtures and CSV point-cloud ingestion.

Every sampler draw is a pure function of (seed, stream, draw index): the
generator for a draw is PCG64 seeded from ``SeedSequence(seed,
spawn_key=(stream, draw))``. Source and target use streams 0 and 1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SOURCE_STREAM = 0
TARGET_STREAM = 1
HELDOUT_STREAM = 2


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=keys)))


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "branch-mixture"
    dim: int = 2
    branches: int = 2
    source_center: tuple[float, ...] = (0.0, -4.0)
    source_std: float = 0.3
    target_height: float = 4.0
    target_half_width: float = 4.0
    target_std: float = 0.3
    seed: int = 42
    source_csv: str | None = None
    target_csv: str | None = None
    csv_header: str = "auto"
    standardize: bool = False
    test_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("branch-mixture", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "branch-mixture":
            if self.branches < 1:
                raise ValueError(f"need at least one branch, got {self.branches}")
            if self.dim < 2:
                raise ValueError("branch mixtures live in d >= 2")
            if len(self.source_center) != 2:
                raise ValueError("source_center gives the first two coordinates")
        else:
            if not self.source_csv or not self.target_csv:
                raise ValueError("csv datasets need both source_csv and target_csv")
        if self.csv_header not in ("auto", "yes", "no"):
            raise ValueError(f"csv_header must be auto, yes or no, got {self.csv_header!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")


@dataclass
class SampleBatch:
    points: np.ndarray
    side: str
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.side not in ("source", "target"):
            raise ValueError(f"side must be source or target, got {self.side!r}")

    def __len__(self) -> int:
        return len(self.points)


def branch_centers(spec: DatasetSpec) -> np.ndarray:
    """Target centers equally spaced on the segment y = height, |x| <= half width."""
    k = spec.branches
    xs = np.zeros(1) if k == 1 else np.linspace(-spec.target_half_width, spec.target_half_width, k)
    centers = np.zeros((k, spec.dim))
    centers[:, 0] = xs
    centers[:, 1] = spec.target_height
    return centers


class GaussianSampler:
    def __init__(self, center, std: float, seed: int, stream: int):
        self.center = np.asarray(center, dtype=np.float64)
        self.std = std
        self.seed = seed
        self.stream = stream

    @property
    def dim(self) -> int:
        return len(self.center)

    def sample(self, n: int, draw: int = 0) -> SampleBatch:
        rng = stream_rng(self.seed, self.stream, draw)
        return SampleBatch(self.center + self.std * rng.standard_normal((n, self.dim)), "source")


class MixtureSampler:
    def __init__(self, centers, std: float, seed: int, stream: int):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.std = std
        self.seed = seed
        self.stream = stream

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def sample(self, n: int, draw: int = 0) -> SampleBatch:
        rng = stream_rng(self.seed, self.stream, draw)
        labels = rng.integers(0, len(self.centers), size=n)
        pts = self.centers[labels] + self.std * rng.standard_normal((n, self.dim))
        return SampleBatch(pts, "target", labels)


class EmpiricalSampler:
    """Uniform draws with replacement from a fixed point cloud."""

    def __init__(self, points, side: str, seed: int, stream: int):
        self.points = np.asarray(points, dtype=np.float64)
        self.side = side
        self.seed = seed
        self.stream = stream

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sample(self, n: int, draw: int = 0) -> SampleBatch:
        rng = stream_rng(self.seed, self.stream, draw)
        return SampleBatch(self.points[rng.integers(0, len(self.points), size=n)], self.side)


def make_branch_mixture(spec: DatasetSpec, seed: int | None = None):
    """(source sampler, target sampler) for the single-source, K-branch task."""
    if spec.kind != "branch-mixture":
        raise ValueError("make_branch_mixture needs a branch-mixture spec")
    seed = spec.seed if seed is None else seed
    center = np.zeros(spec.dim)
    center[:2] = spec.source_center
    source = GaussianSampler(center, spec.source_std, seed, SOURCE_STREAM)
    target = MixtureSampler(branch_centers(spec), spec.target_std, seed, TARGET_STREAM)
    return source, target


def _parse_float(cell: str) -> float:
    return float(cell.strip())


def read_csv_matrix(path, header: str = "auto") -> np.ndarray:
    """Parse a numeric CSV (comma separated, optional single header line)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if header == "yes" or (header == "auto" and rows and not _numeric_row(rows[0])):
        rows = rows[1:]
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        try:
            out[i] = [_parse_float(c) for c in row]
        except ValueError:
            raise ValueError(f"{path}: non-numeric cell in row {i + 1}") from None
    return out


def _numeric_row(row) -> bool:
    try:
        [_parse_float(c) for c in row]
    except ValueError:
        return False
    return True


def write_csv_matrix(path, X, header=None) -> None:
    """Write rows with shortest round-trip float formatting."""
    X = np.asarray(X, dtype=np.float64)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def load_csv(spec: DatasetSpec) -> tuple[SampleBatch, SampleBatch]:
    if spec.kind != "csv":
        raise ValueError("load_csv needs a csv spec")
    src = read_csv_matrix(spec.source_csv, spec.csv_header)
    tgt = read_csv_matrix(spec.target_csv, spec.csv_header)
    if src.size == 0 or tgt.size == 0:
        raise ValueError("csv inputs must contain at least one row")
    if src.shape[1] != tgt.shape[1]:
        raise ValueError(f"source has width {src.shape[1]} but target has {tgt.shape[1]}")
    if spec.standardize:
        src, tgt = standardize(src), standardize(tgt)
    return SampleBatch(src, "source"), SampleBatch(tgt, "target")


def train_test_split(batch: SampleBatch, fraction: float, seed: int) -> tuple[SampleBatch, SampleBatch]:
    """Shuffle rows with ``seed`` and put ``round(fraction * n)`` of them in train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(batch)
    k = int(round(fraction * n))
    if k == 0 or k == n:
        raise ValueError(f"a {fraction} split of {n} rows leaves one side empty")
    perm = stream_rng(seed).permutation(n)

    def part(idx):
        labels = None if batch.labels is None else batch.labels[idx]
        return SampleBatch(batch.points[idx], batch.side, labels)

    return part(perm[:k]), part(perm[k:])


def make_samplers(spec: DatasetSpec, seed: int | None = None):
    """(source, train target, held-out target points or None) for any spec kind."""
    seed = spec.seed if seed is None else seed
    if spec.kind == "branch-mixture":
        source, target = make_branch_mixture(spec, seed)
        return source, target, None
    src, tgt = load_csv(spec)
    heldout = None
    if spec.test_fraction > 0:
        tgt, test = train_test_split(tgt, 1.0 - spec.test_fraction, seed)
        heldout = test.points
    return (
        EmpiricalSampler(src.points, "source", seed, SOURCE_STREAM),
        EmpiricalSampler(tgt.points, "target", seed, TARGET_STREAM),
        heldout,
    )
