"""Exact optimal transport on small discrete measures.

The transport cost is solved as the transportation linear program; the two
dual formulations (one with slope constraints on all support pairs, one with
constraints only from real-support points to fake-support points) are solved
as independent linear programs over the score values.  On top of these sit
closed-form optimal scores for the classical objectives and the executable
gradient-direction checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .simplex import solve_standard_form

__all__ = [
    "ATOM_CAPACITY",
    "CapacityError",
    "DiscreteDist",
    "DualSolution",
    "DualityReport",
    "LineGradientReport",
    "ScalingReport",
    "TransportPlan",
    "bounding_pairs",
    "closed_form_fstar",
    "compact_dual",
    "kr_dual",
    "line_gradient_check",
    "line_instance",
    "scaling_check",
    "verify_duality",
    "w1_exact",
]

ATOM_CAPACITY = 64


class CapacityError(ValueError):
    """Instance exceeds the supported atom count."""


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Weighted point set: atoms in R^n with positive masses summing to 1."""

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)
        if len(atoms) != len(masses):
            raise ValueError("atoms and masses must have the same length")
        if len(atoms) == 0:
            raise ValueError("distribution must have at least one atom")
        if (masses <= 0).any():
            raise ValueError("masses must be positive")
        if abs(masses.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses must sum to 1, got {masses.sum()!r}")
        for i in range(len(atoms)):
            for j in range(i + 1, len(atoms)):
                if np.array_equal(atoms[i], atoms[j]):
                    raise ValueError(f"atoms {i} and {j} coincide")

    def __len__(self) -> int:
        return len(self.masses)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(self.dim)] + ["mass"])
            for atom, mass in zip(self.atoms, self.masses):
                writer.writerow([f"{v:.17g}" for v in atom] + [f"{mass:.17g}"])

    @staticmethod
    def load_csv(path) -> "DiscreteDist":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1] != "mass":
            raise ValueError(f"{path}: expected header x0,...,mass")
        data = np.asarray([[float(v) for v in row] for row in rows[1:]])
        if data.size == 0:
            raise ValueError(f"{path}: no atoms")
        return DiscreteDist(atoms=data[:, :-1], masses=data[:, -1])


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Non-negative mass flows from real atoms (rows) to fake atoms (columns)."""

    flows: np.ndarray
    cost: float


@dataclass(frozen=True, eq=False)
class DualSolution:
    """Score values on the union support, with the constraint mode used."""

    points: np.ndarray
    values: np.ndarray
    objective: float
    mode: str  # "kr" (all pairs) or "compact" (real -> fake only)
    real_index: np.ndarray
    fake_index: np.ndarray

    def feasibility_gap(self) -> float:
        """Largest violation of the slope constraints (<= 0 means feasible)."""
        d = _distance_matrix(self.points, self.points)
        diff = self.values[:, None] - self.values[None, :]
        if self.mode == "kr":
            gap = diff - d
            np.fill_diagonal(gap, -np.inf)
            return float(gap.max())
        gap = diff[np.ix_(self.real_index, self.fake_index)] - d[
            np.ix_(self.real_index, self.fake_index)
        ]
        same = self.real_index[:, None] == self.fake_index[None, :]
        gap = np.where(same, -np.inf, gap)
        return float(gap.max())


@dataclass(frozen=True)
class DualityReport:
    primal: float
    kr: float
    compact: float
    max_gap: float
    passed: bool


@dataclass(frozen=True)
class ScalingReport:
    value_at_k: float
    k_times_value_at_1: float
    gap: float


def _check_capacity(*dists: DiscreteDist) -> None:
    for d in dists:
        if len(d) > ATOM_CAPACITY:
            raise CapacityError(
                f"{len(d)} atoms exceeds the {ATOM_CAPACITY}-atom capacity"
            )


def _distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def w1_exact(p: DiscreteDist, q: DiscreteDist) -> TransportPlan:
    """Optimal transport plan between two discrete measures.

    Solves the transportation linear program exactly (dense simplex with
    Bland's rule); marginal feasibility of the result is verified to 1e-9.
    """
    _check_capacity(p, q)
    if p.dim != q.dim:
        raise ValueError("distributions must live in the same dimension")
    m, n = len(p), len(q)
    D = _distance_matrix(p.atoms, q.atoms)
    c = D.reshape(-1)

    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n : (i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    b = np.concatenate([p.masses, q.masses])

    x, _ = solve_standard_form(c, A, b)
    flows = x.reshape(m, n)
    if abs(flows.sum(axis=1) - p.masses).max() > 1e-9:
        raise RuntimeError("transport plan violates the real marginals")
    if abs(flows.sum(axis=0) - q.masses).max() > 1e-9:
        raise RuntimeError("transport plan violates the fake marginals")
    return TransportPlan(flows=flows, cost=float((flows * D).sum()))


def _union_support(p: DiscreteDist, q: DiscreteDist):
    """Merge the two supports, identifying exactly coincident atoms."""
    points = [a.copy() for a in p.atoms]
    real_index = np.arange(len(p))
    fake_index = np.empty(len(q), dtype=int)
    for j, atom in enumerate(q.atoms):
        hit = -1
        for i, pt in enumerate(points):
            if np.array_equal(atom, pt):
                hit = i
                break
        if hit < 0:
            points.append(atom.copy())
            hit = len(points) - 1
        fake_index[j] = hit
    pts = np.asarray(points)
    w = np.zeros(len(pts))
    np.add.at(w, real_index, p.masses)
    np.add.at(w, fake_index, -q.masses)
    return pts, w, real_index, fake_index


def _solve_value_lp(points, w, pairs, lip_bound=1.0):
    """max w @ f  s.t.  f[i] - f[j] <= lip_bound * d(i, j) over the given pairs.

    Free score variables are split into positive parts; the slack columns form
    a ready feasible basis at f = 0.
    """
    n_pts = len(points)
    n_pairs = len(pairs)
    if n_pairs == 0:
        return np.zeros(n_pts), 0.0
    d = np.array(
        [lip_bound * np.linalg.norm(points[i] - points[j]) for i, j in pairs]
    )
    n_vars = 2 * n_pts + n_pairs
    A = np.zeros((n_pairs, n_vars))
    for k, (i, j) in enumerate(pairs):
        A[k, i] += 1.0
        A[k, n_pts + i] -= 1.0
        A[k, j] -= 1.0
        A[k, n_pts + j] += 1.0
        A[k, 2 * n_pts + k] = 1.0
    c = np.concatenate([-w, w, np.zeros(n_pairs)])
    basis = list(range(2 * n_pts, 2 * n_pts + n_pairs))
    x, obj = solve_standard_form(c, A, d, basis=basis)
    f = x[:n_pts] - x[n_pts : 2 * n_pts]
    return f, -obj


def kr_dual(p: DiscreteDist, q: DiscreteDist) -> DualSolution:
    """Maximize the mean-score gap with slope constraints on all support pairs."""
    _check_capacity(p, q)
    points, w, real_index, fake_index = _union_support(p, q)
    n = len(points)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    f, obj = _solve_value_lp(points, w, pairs)
    return DualSolution(
        points=points,
        values=f,
        objective=obj,
        mode="kr",
        real_index=real_index,
        fake_index=fake_index,
    )


def compact_dual(p: DiscreteDist, q: DiscreteDist) -> DualSolution:
    """Same objective with constraints only from real atoms to fake atoms."""
    _check_capacity(p, q)
    points, w, real_index, fake_index = _union_support(p, q)
    pairs = [
        (int(i), int(j)) for i in real_index for j in fake_index if int(i) != int(j)
    ]
    f, obj = _solve_value_lp(points, w, pairs)
    return DualSolution(
        points=points,
        values=f,
        objective=obj,
        mode="compact",
        real_index=real_index,
        fake_index=fake_index,
    )


def verify_duality(p: DiscreteDist, q: DiscreteDist, tol: float = 1e-6) -> DualityReport:
    """Solve the primal and both duals; report the largest pairwise gap."""
    primal = w1_exact(p, q).cost
    kr = kr_dual(p, q).objective
    compact = compact_dual(p, q).objective
    vals = (primal, kr, compact)
    max_gap = max(abs(a - b) for a in vals for b in vals)
    return DualityReport(
        primal=primal, kr=kr, compact=compact, max_gap=max_gap, passed=max_gap <= tol
    )


def scaling_check(p: DiscreteDist, q: DiscreteDist, k: float) -> ScalingReport:
    """Check that the best mean-score objective scales linearly in the slope cap.

    ``value_at_k`` is the minimum of (mean fake score - mean real score) over
    scores with slope at most k between support points.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    _check_capacity(p, q)
    points, w, real_index, fake_index = _union_support(p, q)
    n = len(points)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    _, obj_k = _solve_value_lp(points, w, pairs, lip_bound=k)
    _, obj_1 = _solve_value_lp(points, w, pairs, lip_bound=1.0)
    value_at_k = -obj_k
    k_times_value_at_1 = k * -obj_1
    return ScalingReport(
        value_at_k=value_at_k,
        k_times_value_at_1=k_times_value_at_1,
        gap=value_at_k - k_times_value_at_1,
    )


def closed_form_fstar(
    kind: str,
    p_r: float,
    p_g: float,
    *,
    alpha: float = 0.0,
    beta: float = 1.0,
    mu: float | None = None,
    normalizer: float | None = None,
) -> float:
    """Pointwise optimal score of the classical unrestricted objectives.

    ``vanilla`` returns +/-inf when one density vanishes, signaling the
    divergence of the log ratio.
    """
    p_r = float(p_r)
    p_g = float(p_g)
    if p_r < 0 or p_g < 0:
        raise ValueError("densities must be non-negative")
    if p_r + p_g == 0:
        raise ValueError("densities must not both be zero")
    if kind == "vanilla":
        if p_g == 0.0:
            return np.inf
        if p_r == 0.0:
            return -np.inf
        return float(np.log(p_r / p_g))
    if kind == "lsgan":
        return (alpha * p_g + beta * p_r) / (p_r + p_g)
    if kind == "fisher":
        if mu is None or mu <= 0:
            raise ValueError("fisher requires a positive mu(x)")
        if normalizer is None or normalizer <= 0:
            raise ValueError("fisher requires a positive normalizer")
        return (p_r - p_g) / (mu * normalizer)
    raise ValueError(f"unknown closed-form kind '{kind}'")


def bounding_pairs(values, points, k: float, tol: float) -> list[tuple[int, int]]:
    """Ordered index pairs whose score difference attains the maximal slope.

    A pair (i, j) qualifies when ``| |f_j - f_i| - k*d(i,j) | <= tol*k*d(i,j)``.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    values = np.asarray(values, dtype=np.float64)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = _distance_matrix(points, points)
    diff = np.abs(values[None, :] - values[:, None])
    out = []
    n = len(values)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            bound = k * d[i, j]
            if bound > 0 and abs(diff[i, j] - bound) <= tol * bound:
                out.append((i, j))
    return out


@dataclass(frozen=True, eq=False)
class LineGradientReport:
    cosines: np.ndarray
    slopes: np.ndarray
    max_cosine_deviation: float
    max_slope_deviation: float


def line_gradient_check(
    critic, x, y, k: float, m: int = 11, tol: float = 1e-12
) -> LineGradientReport:
    """Probe critic gradients along the segment from x to y.

    At each of m interpolants the gradient direction is compared against the
    unit vector from x to y (as cosine) and its magnitude against k.  A
    gradient with norm below ``tol`` is reported as cosine deviation 1 rather
    than raised.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.array_equal(x, y):
        raise ValueError("x and y must differ")
    if m < 2:
        raise ValueError("need at least two sample points")
    ts = np.linspace(0.0, 1.0, m)
    pts = x[None, :] + ts[:, None] * (y - x)[None, :]
    grads = critic.input_grads(pts)
    u = (y - x) / np.linalg.norm(y - x)
    norms = np.linalg.norm(grads, axis=1)
    cosines = np.where(norms > tol, grads @ u / np.where(norms > tol, norms, 1.0), 0.0)
    slopes = norms
    max_cos_dev = float(np.max(1.0 - cosines))
    max_slope_dev = float(np.max(np.abs(norms - k)) / k)
    return LineGradientReport(
        cosines=cosines,
        slopes=slopes,
        max_cosine_deviation=max_cos_dev,
        max_slope_deviation=max_slope_dev,
    )


def line_instance(
    n_atoms: int = 20,
    real_offset: float = 1.0,
    fake_offset: float = 0.0,
    z_lo: float = 0.0,
    z_hi: float = 1.0,
) -> tuple[DiscreteDist, DiscreteDist]:
    """Two parallel vertical segments discretized on a shared grid."""
    z = np.linspace(z_lo, z_hi, n_atoms)
    masses = np.full(n_atoms, 1.0 / n_atoms)
    real = DiscreteDist(
        atoms=np.column_stack([np.full(n_atoms, real_offset), z]), masses=masses
    )
    fake = DiscreteDist(
        atoms=np.column_stack([np.full(n_atoms, fake_offset), z]), masses=masses
    )
    return real, fake
