"""Entropic and exact optimal transport, and sample-based distribution metrics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import Tensor
from .integrate import NonFiniteError

BRUTE_FORCE_MAX = 8

# a scaling step is accepted while potentials stay within TAU * eps of the
# last absorption point; otherwise the step is redone in the log domain
_TAU = 40.0
_TINY = 1e-200


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float | None = None  # None: 0.05 * mean ground cost
    iterations: int = 200

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError("need at least one Sinkhorn iteration")


def cost_matrix(X, Y, p: int = 2) -> np.ndarray:
    """C[i, j] = |x_i - y_j|^p for p in {1, 2}."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or len(X) == 0 or len(Y) == 0:
        raise ValueError("cost_matrix needs nonempty (n, d) point sets")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    sq = ad.sqdist(X, Y).value
    return sq if p == 2 else np.sqrt(sq)


class _Epoch(NamedTuple):
    f0: np.ndarray
    g0: np.ndarray
    kernel: np.ndarray  # exp((f0_i + g0_j - C_ij) / eps)


@dataclass
class _Trace:
    """Everything the reverse pass needs to replay the iterations."""

    epochs: list
    # (kind, epoch, row scale, column scale) so that the softmax matrix of
    # the step equals diag(row) @ kernel @ diag(col)
    steps: list
    f: np.ndarray
    g: np.ndarray


def _sinkhorn_iterations(C: np.ndarray, a: np.ndarray, b: np.ndarray, eps: float, iterations: int) -> _Trace:
    loga, logb = np.log(a), np.log(b)
    n, m = C.shape
    f, g = np.zeros(n), np.zeros(m)
    epochs: list[_Epoch] = []
    steps = []
    Ct = None
    for _ in range(iterations):
        # f-update: f_i = -eps * log sum_j b_j exp((g_j - C_ij) / eps)
        f_new = None
        if epochs:
            f0, g0, K = epochs[-1]
            col = b * np.exp((g - g0) / eps)
            s = K @ col
            if np.all(s > _TINY) and np.all(np.isfinite(s)):
                cand = f0 - eps * np.log(s)
                if np.max(np.abs(cand - f0)) <= _TAU * eps:
                    f_new = cand
                    steps.append(("f", len(epochs) - 1, np.exp((f_new - f0) / eps), col))
        if f_new is None:
            f_new = -eps * logsumexp(logb[None, :] + (g[None, :] - C) / eps, axis=1)
            epochs.append(_Epoch(f_new, g, np.exp((f_new[:, None] + g[None, :] - C) / eps)))
            steps.append(("f", len(epochs) - 1, np.ones(n), b))
        f = f_new

        # g-update: g_j = -eps * log sum_i a_i exp((f_i - C_ij) / eps)
        g_new = None
        f0, g0, K = epochs[-1]
        row = a * np.exp((f - f0) / eps)
        s = row @ K
        if np.all(s > _TINY) and np.all(np.isfinite(s)):
            cand = g0 - eps * np.log(s)
            if np.max(np.abs(cand - g0)) <= _TAU * eps:
                g_new = cand
                steps.append(("g", len(epochs) - 1, row, np.exp((g_new - g0) / eps)))
        if g_new is None:
            if Ct is None:
                Ct = np.ascontiguousarray(C.T)
            g_new = -eps * logsumexp(loga[None, :] + (f[None, :] - Ct) / eps, axis=1)
            epochs.append(_Epoch(f, g_new, np.exp((f[:, None] + g_new[None, :] - C) / eps)))
            steps.append(("g", len(epochs) - 1, a, np.ones(m)))
        g = g_new
    return _Trace(epochs, steps, f, g)


def _plan(C, a, b, f, g, eps) -> np.ndarray:
    return np.exp(np.log(a)[:, None] + np.log(b)[None, :] + (f[:, None] + g[None, :] - C) / eps)


def _cost_gradient(C, trace: _Trace, plan: np.ndarray, eps: float, gbar_value: float) -> np.ndarray:
    """Gradient of sum(plan * C) with respect to C through every iteration."""
    pc = plan * C
    grad = gbar_value * plan * (1.0 - C / eps)
    fbar = gbar_value * pc.sum(axis=1) / eps
    gbar = gbar_value * pc.sum(axis=0) / eps
    left = [[] for _ in trace.epochs]
    right = [[] for _ in trace.epochs]
    for kind, e, row, col in reversed(trace.steps):
        K = trace.epochs[e].kernel
        if kind == "g":
            # g_j depends on C_ij (+Q_ij) and on f_i (-Q_ij)
            w = col * gbar
            left[e].append(row)
            right[e].append(w)
            fbar = fbar - row * (K @ w)
            gbar = np.zeros_like(gbar)
        else:
            u = row * fbar
            left[e].append(u)
            right[e].append(col)
            gbar = gbar - col * (u @ K)
            fbar = np.zeros_like(fbar)
    for e, epoch in enumerate(trace.epochs):
        if left[e]:
            grad += epoch.kernel * (np.stack(left[e], axis=1) @ np.stack(right[e], axis=0))
    return grad


def _marginals(a, b, shape):
    n, m = shape
    a = np.full(n, 1.0 / n) if a is None else np.asarray(a, dtype=np.float64)
    b = np.full(m, 1.0 / m) if b is None else np.asarray(b, dtype=np.float64)
    if a.shape != (n,) or b.shape != (m,):
        raise ValueError("marginals do not match the cost matrix")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginals must be positive")
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("marginals must each sum to one")
    return a, b


def sinkhorn_ot(
    a, b, C, epsilon: float, iterations: int, scaling: float | None = None
) -> tuple[float, np.ndarray]:
    """Entropic OT by log-stabilized Sinkhorn; returns (transport cost, plan).

    The reported value is sum(plan * C): the entropy term is not included.
    With ``scaling`` in (0, 1) the regularization starts at max(C) and shrinks
    by that factor per stage down to ``epsilon``, warm-starting each stage and
    running ``iterations`` updates in every stage. Small ``epsilon`` needs
    this, since plain iterations converge at a rate set by exp(-range(C)/eps).
    """
    C = np.asarray(C, dtype=np.float64)
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    a, b = _marginals(a, b, C.shape)
    if scaling is None:
        trace = _sinkhorn_iterations(C, a, b, epsilon, iterations)
        f, g = trace.f, trace.g
    else:
        if not 0.0 < scaling < 1.0:
            raise ValueError(f"scaling must lie in (0, 1), got {scaling}")
        f, g = _annealed_potentials(C, a, b, epsilon, iterations, scaling)
    plan = _plan(C, a, b, f, g, epsilon)
    return float(np.sum(plan * C)), plan


def _annealed_potentials(C, a, b, eps, iterations, factor):
    loga, logb = np.log(a), np.log(b)
    g = np.zeros(C.shape[1])
    stage = max(float(C.max()), eps)
    while True:
        for _ in range(iterations):
            f = -stage * logsumexp(logb[None, :] + (g[None, :] - C) / stage, axis=1)
            g = -stage * logsumexp(loga[:, None] + (f[:, None] - C) / stage, axis=0)
        if stage == eps:
            return f, g
        stage = max(eps, stage * factor)


def sinkhorn_cost(C, epsilon: float, iterations: int, a=None, b=None) -> Tensor:
    """Differentiable entropic transport cost, unrolled through the iterations."""
    C = ad.as_tensor(C)
    Cv = C.value
    if not np.all(np.isfinite(Cv)):
        # inside training this means the states overflowed
        raise NonFiniteError("cost matrix has non-finite entries")
    a, b = _marginals(a, b, Cv.shape)
    trace = _sinkhorn_iterations(Cv, a, b, epsilon, iterations)
    plan = _plan(Cv, a, b, trace.f, trace.g, epsilon)

    def rule(g):
        return (_cost_gradient(Cv, trace, plan, epsilon, float(g)),)

    return ad.primitive(np.sum(plan * Cv), (C,), rule)


def _canonical_pair(X: Tensor, Y: Tensor) -> tuple[Tensor, Tensor]:
    kx = (X.shape, X.value.tobytes())
    ky = (Y.shape, Y.value.tobytes())
    return (Y, X) if ky < kx else (X, Y)


def sinkhorn_divergence(X, Y, epsilon: float | None = None, iterations: int = 200) -> Tensor:
    """Debiased S_eps(X, Y) = OT(X, Y) - OT(X, X)/2 - OT(Y, Y)/2, uniform weights.

    All three terms share the squared Euclidean cost and one epsilon. With
    ``epsilon=None`` it is 0.05 times the mean cross cost, held constant
    under differentiation.

    After a finite number of iterations OT(X, Y) and OT(Y, X) differ slightly,
    so the cross term averages both orientations. Floating-point addition is
    commutative, which makes the result bitwise symmetric in (X, Y) while
    staying a smooth function of both inputs.
    """
    X, Y = ad.as_tensor(X), ad.as_tensor(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"need (n, d) and (m, d) point sets, got {X.shape} and {Y.shape}")
    if epsilon is None:
        epsilon = auto_epsilon(X, Y)
        if not epsilon > 0:
            epsilon = 1e-3
    cross = ad.add(
        sinkhorn_cost(ad.sqdist(X, Y), epsilon, iterations),
        sinkhorn_cost(ad.sqdist(Y, X), epsilon, iterations),
    )
    self_x = sinkhorn_cost(ad.sqdist(X, X), epsilon, iterations)
    self_y = sinkhorn_cost(ad.sqdist(Y, Y), epsilon, iterations)
    return ad.scale(ad.sub(cross, ad.add(self_x, self_y)), 0.5)


def auto_epsilon(X, Y) -> float:
    X, Y = _canonical_pair(ad.as_tensor(X), ad.as_tensor(Y))
    return 0.05 * float(np.mean(ad.sqdist(X, Y).value))


def _assignment_cost(C: np.ndarray, perm: np.ndarray) -> float:
    return float(C[np.arange(len(perm)), perm].sum())


def brute_force_assignment(C: np.ndarray) -> np.ndarray:
    """Exhaustive minimum over all permutations; lowest index order wins ties."""
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    costs = C[np.arange(n)[None, :], perms].sum(axis=1)
    return perms[int(np.argmin(costs))]


def optimal_assignment(C: np.ndarray) -> np.ndarray:
    """perm minimizing sum_i C[i, perm[i]] for a square cost matrix."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"need a square cost matrix, got {C.shape}")
    if C.shape[0] <= BRUTE_FORCE_MAX:
        return brute_force_assignment(C)
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(len(rows), dtype=np.intp)
    perm[rows] = cols
    return perm


def exact_wasserstein(X, Y, p: int = 2, method: str = "auto") -> float:
    """W_p between two equal-size uniform point clouds by optimal assignment.

    ``method`` is "auto" (exhaustive up to 8 points), "brute" or "hungarian".
    """
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if len(X) != len(Y):
        raise ValueError(f"point clouds must have equal size, got {len(X)} and {len(Y)}")
    C = cost_matrix(X, Y, p)
    if method == "brute":
        perm = brute_force_assignment(C)
    elif method == "hungarian":
        rows, cols = linear_sum_assignment(C)
        perm = np.empty(len(rows), dtype=np.intp)
        perm[rows] = cols
    elif method == "auto":
        perm = optimal_assignment(C)
    else:
        raise ValueError(f"unknown method {method!r}")
    return (_assignment_cost(C, perm) / len(X)) ** (1.0 / p)


def median_bandwidth(X, Y) -> float:
    pts = np.concatenate([np.asarray(X, float), np.asarray(Y, float)])
    return float(np.median(pdist(pts)))


def rbf_mmd(X, Y, bandwidth: float | str = "auto") -> float:
    """sqrt(max(MMD^2, 0)) with the unbiased U-statistic and a Gaussian kernel.

    The kernel is exp(-|x - y|^2 / (2 h^2)); ``"auto"`` sets h to the median
    pairwise distance of the pooled sample.
    """
    return float(np.sqrt(max(mmd_squared(X, Y, bandwidth), 0.0)))


def mmd_squared(X, Y, bandwidth: float | str = "auto") -> float:
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if len(X) < 2 or len(Y) < 2:
        raise ValueError("the unbiased MMD needs at least two points per side")
    kx, ky = (X.shape, X.tobytes()), (Y.shape, Y.tobytes())
    if ky < kx:
        X, Y = Y, X
    h = median_bandwidth(X, Y) if bandwidth == "auto" else float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    gamma = 1.0 / (2.0 * h * h)
    n, m = len(X), len(Y)
    kxx = np.exp(-gamma * ad.sqdist(X, X).value)
    kyy = np.exp(-gamma * ad.sqdist(Y, Y).value)
    kxy = np.exp(-gamma * ad.sqdist(X, Y).value)
    xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(xx + yy - 2.0 * kxy.mean())


def minibatch_ot_coupling(X0, X1) -> np.ndarray:
    """Permutation pairing X0[i] with X1[perm[i]] at minimum squared distance.

    Rows of X0 that coincide exactly receive their targets in increasing order.
    """
    X0, X1 = np.asarray(X0, dtype=np.float64), np.asarray(X1, dtype=np.float64)
    if X0.shape != X1.shape:
        raise ValueError(f"batches must have equal shape, got {X0.shape} and {X1.shape}")
    perm = optimal_assignment(cost_matrix(X0, X1, 2))
    _, groups = np.unique(X0, axis=0, return_inverse=True)
    groups = groups.ravel()
    for gid in np.unique(groups):
        rows = np.flatnonzero(groups == gid)
        if len(rows) > 1:
            perm[rows] = np.sort(perm[rows])
    return perm
