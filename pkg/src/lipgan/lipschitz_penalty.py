"""Blend-region sampling and the gradient-based Lipschitz regularizers.

Three penalties are provided: the mean squared deviation of gradient norms
from a target (``gp``), the one-sided variant that only penalizes norms above
the target (``lp``), and the squared maximum norm (``maxgp``).  Each accepts
either a plain array of norms or a graph expression, in which case the result
stays differentiable with respect to everything the norms depend on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grad_core import Expr, ExprGraph, gradient_graph

__all__ = [
    "PenaltySpec",
    "SMaxList",
    "estimate_k",
    "grad_norm_expr",
    "grad_norms",
    "interpolate",
    "penalty_expr",
    "penalty_gp",
    "penalty_lp",
    "penalty_maxgp",
    "sample_blend",
]

PENALTY_KINDS = ("gp", "lp", "maxgp")


@dataclass(frozen=True)
class PenaltySpec:
    """Which regularizer to apply and with what strength.

    ``weight`` is the multiplier on the penalty term (config key ``lambda``),
    ``k0`` the target gradient scale for gp/lp, and ``smax_capacity`` the size
    of the tracked-maximum list for maxgp (0 disables it).
    """

    kind: str = "maxgp"
    weight: float = 10.0
    k0: float = 1.0
    smax_capacity: int = 0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind '{self.kind}'")
        if self.weight < 0:
            raise ValueError("penalty weight must be non-negative")
        if self.k0 < 0:
            raise ValueError("k0 must be non-negative")
        if self.smax_capacity < 0:
            raise ValueError("smax capacity must be non-negative")


def interpolate(reals, fakes, t):
    """Points ``t*real + (1-t)*fake``, paired by batch index."""
    reals = np.asarray(reals, dtype=np.float64)
    fakes = np.asarray(fakes, dtype=np.float64)
    if reals.shape != fakes.shape:
        raise ValueError(
            f"real and fake batches must match, got {reals.shape} vs {fakes.shape}"
        )
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    return t * reals + (1.0 - t) * fakes


def sample_blend(reals, fakes, rng) -> np.ndarray:
    """One random interpolant per (real, fake) pair, t uniform on [0, 1]."""
    reals = np.asarray(reals, dtype=np.float64)
    t = rng.uniform(size=(reals.shape[0], 1))
    return interpolate(reals, fakes, t)


def grad_norm_expr(graph: ExprGraph, scores: Expr, points: Expr) -> Expr:
    """Differentiable per-point norms of the score gradients w.r.t. inputs.

    Summing the batch of scores first makes one backward sweep produce every
    per-sample input gradient at once (samples do not interact).
    """
    gx = gradient_graph(graph, scores.sum(), points)
    return gx.square().sum1().sqrt()


def grad_norms(critic, points) -> np.ndarray:
    """Numeric per-point gradient norms via the critic's input gradients."""
    g = critic.input_grads(points)
    return np.sqrt((g * g).sum(axis=1))


def _as_norms(norms) -> np.ndarray:
    arr = np.asarray(norms, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty batch of norms")
    return arr


def _squared_norms(norms: Expr) -> Expr | None:
    node = norms.graph.nodes[norms.idx]
    if node.op == "sqrt":
        return Expr(norms.graph, node.parents[0])
    return None


def penalty_maxgp(norms, weight: float):
    """weight * (max norm)^2; gradients flow only through the attaining sample."""
    if isinstance(norms, Expr):
        # max(n)^2 == max(n^2) for n >= 0; differentiating the squared form
        # avoids the sqrt singularity at exactly-zero gradients
        sq = _squared_norms(norms)
        if sq is not None:
            return sq.max() * float(weight)
        return norms.max().square() * float(weight)
    arr = _as_norms(norms)
    return float(weight) * float(arr.max()) ** 2


def penalty_gp(norms, k0: float, weight: float):
    """weight * mean((norm - k0)^2)."""
    if isinstance(norms, Expr):
        if k0 == 0.0:
            sq = _squared_norms(norms)
            if sq is not None:
                return sq.mean() * float(weight)
        return (norms - float(k0)).square().mean() * float(weight)
    arr = _as_norms(norms)
    return float(weight) * float(np.mean((arr - k0) ** 2))


def penalty_lp(norms, k0: float, weight: float):
    """weight * mean(max(0, norm - k0)^2); zero when all norms are below k0."""
    if isinstance(norms, Expr):
        return (norms - float(k0)).relu().square().mean() * float(weight)
    arr = _as_norms(norms)
    return float(weight) * float(np.mean(np.maximum(0.0, arr - k0) ** 2))


def penalty_expr(spec: PenaltySpec, norms: Expr) -> Expr:
    if spec.kind == "maxgp":
        return penalty_maxgp(norms, spec.weight)
    if spec.kind == "gp":
        return penalty_gp(norms, spec.k0, spec.weight)
    return penalty_lp(norms, spec.k0, spec.weight)


@dataclass
class SMaxList:
    """Fixed-capacity list of (point, gradient norm), sorted by norm descending.

    Owned by a single training run; merged candidates displace smaller norms,
    with stable ordering on ties.
    """

    capacity: int
    entries: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def update(self, points, norms) -> None:
        if self.capacity == 0:
            return
        points = np.asarray(points, dtype=np.float64)
        norms = np.asarray(norms, dtype=np.float64)
        merged = self.entries + [
            (points[i].copy(), float(norms[i])) for i in range(len(norms))
        ]
        merged.sort(key=lambda e: -e[1])
        self.entries = merged[: self.capacity]

    @property
    def points(self) -> np.ndarray:
        return np.array([p for p, _ in self.entries], dtype=np.float64)

    @property
    def norms(self) -> list[float]:
        return [n for _, n in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def estimate_k(critic, reals, fakes, n_samples: int, rng) -> float:
    """Maximum gradient norm over random blend points (diagnostic only)."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    reals = np.asarray(reals, dtype=np.float64)
    fakes = np.asarray(fakes, dtype=np.float64)
    i = rng.integers(0, len(reals), size=n_samples)
    j = rng.integers(0, len(fakes), size=n_samples)
    t = rng.uniform(size=(n_samples, 1))
    pts = t * reals[i] + (1.0 - t) * fakes[j]
    return float(grad_norms(critic, pts).max())
