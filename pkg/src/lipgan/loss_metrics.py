"""Scalar loss families for adversarial training.

A metric bundles the per-side score losses (one applied to critic scores of
generated samples, one to scores of real samples) with analytic first and
second derivatives, plus graph builders so the same losses can be penalized
and differentiated inside a training graph.  The generator-side loss is fixed
to the negated score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grad_core import Expr

__all__ = [
    "KINDS",
    "AdmissibilityReport",
    "LossMetric",
    "UnboundedObjectiveError",
    "check_admissible",
    "disc_objective",
    "gen_objective",
    "make_metric",
    "pointwise_optimal",
]

KINDS = ("linear", "logistic", "sqrt_softplus", "exp", "quadratic", "hinge")
_NEEDS_ALPHA = frozenset({"quadratic", "hinge"})


class UnboundedObjectiveError(ArithmeticError):
    """The pointwise objective has no finite minimizer."""


def _sigmoid(x):
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(np.shape(x))


@dataclass(frozen=True)
class LossMetric:
    """One loss family; the real-side loss is the reflection of the fake side."""

    kind: str
    alpha: float | None = None

    # fake side: applied to critic scores of generated samples
    def fake_loss(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "linear":
            return s
        if self.kind == "logistic":
            return np.logaddexp(0.0, s)
        if self.kind == "sqrt_softplus":
            return s + np.sqrt(s * s + 1.0)
        if self.kind == "exp":
            return np.exp(s)
        if self.kind == "quadratic":
            return (s + self.alpha) ** 2
        if self.kind == "hinge":
            return np.maximum(0.0, s + self.alpha)
        raise AssertionError(self.kind)

    def fake_d1(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "linear":
            return np.ones_like(s)
        if self.kind == "logistic":
            return _sigmoid(s)
        if self.kind == "sqrt_softplus":
            return 1.0 + s / np.sqrt(s * s + 1.0)
        if self.kind == "exp":
            return np.exp(s)
        if self.kind == "quadratic":
            return 2.0 * (s + self.alpha)
        if self.kind == "hinge":
            return (s + self.alpha > 0.0).astype(np.float64)
        raise AssertionError(self.kind)

    def fake_d2(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "linear":
            return np.zeros_like(s)
        if self.kind == "logistic":
            sig = _sigmoid(s)
            return sig * (1.0 - sig)
        if self.kind == "sqrt_softplus":
            return (s * s + 1.0) ** -1.5
        if self.kind == "exp":
            return np.exp(s)
        if self.kind == "quadratic":
            return np.full_like(s, 2.0)
        if self.kind == "hinge":
            return np.zeros_like(s)
        raise AssertionError(self.kind)

    # real side: reflection of the fake side
    def real_loss(self, s):
        return self.fake_loss(np.negative(s))

    def real_d1(self, s):
        return -self.fake_d1(np.negative(s))

    def real_d2(self, s):
        return self.fake_d2(np.negative(s))

    # generator side, fixed
    def gen_loss(self, s):
        return np.negative(np.asarray(s, dtype=np.float64))

    def gen_d1(self, s):
        return -np.ones_like(np.asarray(s, dtype=np.float64))

    # graph builders
    def fake_loss_expr(self, e: Expr) -> Expr:
        if self.kind == "linear":
            return e
        if self.kind == "logistic":
            return e.softplus()
        if self.kind == "sqrt_softplus":
            return e + (e.square() + 1.0).sqrt()
        if self.kind == "exp":
            return e.exp()
        if self.kind == "quadratic":
            return (e + self.alpha).square()
        if self.kind == "hinge":
            return (e + self.alpha).relu()
        raise AssertionError(self.kind)

    def real_loss_expr(self, e: Expr) -> Expr:
        return self.fake_loss_expr(-e)


def make_metric(kind: str, alpha: float | None = None) -> LossMetric:
    """Construct a metric; ``alpha`` is required exactly for quadratic/hinge."""
    if kind not in KINDS:
        raise ValueError(f"unknown metric kind '{kind}', expected one of {KINDS}")
    if kind in _NEEDS_ALPHA:
        if alpha is None:
            raise ValueError(f"metric '{kind}' requires alpha")
        return LossMetric(kind, float(alpha))
    if alpha is not None:
        raise ValueError(f"metric '{kind}' does not take alpha")
    return LossMetric(kind, None)


@dataclass(frozen=True)
class AdmissibilityReport:
    fake_strictly_increasing: bool
    real_strictly_decreasing: bool
    fake_convex: bool
    real_convex: bool
    balance_point: float | None
    admissible: bool


def check_admissible(
    metric: LossMetric,
    grid_lo: float = -10.0,
    grid_hi: float = 10.0,
    step: float = 0.01,
) -> AdmissibilityReport:
    """Evaluate the loss-pair conditions on a grid using analytic derivatives.

    The balance point (where the two first derivatives cancel) is located by
    bisection when a sign change exists; failing conditions are reported, not
    raised.
    """
    if not grid_lo < grid_hi:
        raise ValueError("grid_lo must be below grid_hi")
    if step <= 0:
        raise ValueError("step must be positive")
    grid = np.arange(grid_lo, grid_hi + 0.5 * step, step)

    fd1 = metric.fake_d1(grid)
    rd1 = metric.real_d1(grid)
    fd2 = metric.fake_d2(grid)
    rd2 = metric.real_d2(grid)

    mono_fake = bool(np.all(fd1 > 0.0))
    mono_real = bool(np.all(rd1 < 0.0))
    convex_fake = bool(np.all(fd2 >= 0.0))
    convex_real = bool(np.all(rd2 >= 0.0))

    s = fd1 + rd1
    balance = None
    zeros = np.flatnonzero(np.abs(s) <= 1e-12)
    if zeros.size:
        balance = float(grid[zeros[np.argmin(np.abs(grid[zeros]))]])
    else:
        flips = np.flatnonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)
        if flips.size:
            lo, hi = float(grid[flips[0]]), float(grid[flips[0] + 1])
            f_lo = float(metric.fake_d1(lo) + metric.real_d1(lo))
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                f_mid = float(metric.fake_d1(mid) + metric.real_d1(mid))
                if f_mid == 0.0:
                    lo = hi = mid
                    break
                if (f_mid > 0) == (f_lo > 0):
                    lo, f_lo = mid, f_mid
                else:
                    hi = mid
            balance = 0.5 * (lo + hi)

    admissible = (
        mono_fake and mono_real and convex_fake and convex_real and balance is not None
    )
    return AdmissibilityReport(
        fake_strictly_increasing=mono_fake,
        real_strictly_decreasing=mono_real,
        fake_convex=convex_fake,
        real_convex=convex_real,
        balance_point=balance,
        admissible=admissible,
    )


def disc_objective(metric: LossMetric, f_fake, f_real) -> float:
    """Mean fake-side loss plus mean real-side loss (penalty added elsewhere)."""
    f_fake = np.asarray(f_fake, dtype=np.float64)
    f_real = np.asarray(f_real, dtype=np.float64)
    if f_fake.size == 0 or f_real.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(metric.fake_loss(f_fake)) + np.mean(metric.real_loss(f_real)))


def gen_objective(f_fake) -> float:
    """Mean negated critic score on generated samples."""
    f_fake = np.asarray(f_fake, dtype=np.float64)
    if f_fake.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(-f_fake))


def _pointwise_value(metric, p_g, p_r, t):
    return p_g * float(metric.fake_loss(t)) + p_r * float(metric.real_loss(t))


def _pointwise_slope(metric, p_g, p_r, t):
    return p_g * float(metric.fake_d1(t)) + p_r * float(metric.real_d1(t))


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(fn, lo, hi, xtol=1e-10):
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def _numeric_minimize(metric, p_g, p_r):
    def slope(t):
        return _pointwise_slope(metric, p_g, p_r, t)

    lo, hi = -1.0, 1.0
    while slope(lo) >= 0.0 and lo > -1e9:
        lo *= 2.0
    while slope(hi) <= 0.0 and hi < 1e9:
        hi *= 2.0
    s_lo, s_hi = slope(lo), slope(hi)
    if s_lo == 0.0 and s_hi == 0.0:
        # flat objective, every point is a minimizer
        return 0.0
    if s_lo >= 0.0 or s_hi <= 0.0:
        raise UnboundedObjectiveError(
            f"pointwise objective for '{metric.kind}' has no finite minimizer "
            f"(p_g={p_g}, p_r={p_r})"
        )

    t = _golden_section(lambda x: _pointwise_value(metric, p_g, p_r, x), lo, hi)
    # polish: bisection on the slope, which golden-section cannot resolve
    # below the sqrt(eps) flatness floor
    a, b = t - 1e-6, t + 1e-6
    if slope(a) < 0.0 < slope(b):
        for _ in range(100):
            mid = 0.5 * (a + b)
            if slope(mid) < 0.0:
                a = mid
            else:
                b = mid
        t = 0.5 * (a + b)
    return t


def pointwise_optimal(
    metric,
    p_g: float,
    p_r: float,
    *,
    method: str = "auto",
    lsgan_targets: tuple[float, float] = (0.0, 1.0),
) -> float:
    """Score minimizing the local objective ``p_g*fake_loss(t) + p_r*real_loss(t)``.

    ``metric`` is a :class:`LossMetric`, or the string ``"lsgan"`` to use the
    two-target quadratic pair whose targets are ``lsgan_targets``.  With
    ``method="numeric"`` the closed forms are bypassed and a golden-section
    search (slope-polished) is used instead.
    """
    p_g = float(p_g)
    p_r = float(p_r)
    if p_g < 0 or p_r < 0:
        raise ValueError("densities must be non-negative")
    if p_g + p_r == 0:
        raise ValueError("densities must not both be zero")

    if isinstance(metric, str):
        if metric != "lsgan":
            raise ValueError(f"unknown pointwise metric '{metric}'")
        a, b = lsgan_targets
        return (a * p_g + b * p_r) / (p_g + p_r)

    if method not in ("auto", "analytic", "numeric"):
        raise ValueError(f"unknown method '{method}'")

    if method == "numeric":
        return _numeric_minimize(metric, p_g, p_r)

    kind = metric.kind
    if kind == "linear":
        if p_g == p_r:
            return 0.0
        raise UnboundedObjectiveError(
            "linear pointwise objective is unbounded below when densities differ"
        )
    if kind in ("logistic", "exp", "sqrt_softplus") and (p_g == 0.0 or p_r == 0.0):
        raise UnboundedObjectiveError(
            f"pointwise objective for '{kind}' attains no minimum with a zero density"
        )
    if kind == "logistic":
        return math.log(p_r / p_g)
    if kind == "exp":
        return 0.5 * math.log(p_r / p_g)
    if kind == "sqrt_softplus":
        r = (p_r - p_g) / (p_r + p_g)
        return r / math.sqrt(1.0 - r * r)
    if kind == "quadratic":
        return metric.alpha * (p_r - p_g) / (p_g + p_r)
    if kind == "hinge":
        if p_g > p_r:
            return -metric.alpha
        if p_g < p_r:
            return metric.alpha
        return 0.0
    raise AssertionError(kind)
