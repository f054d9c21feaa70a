"""Dense two-phase tableau simplex with Bland's rule.

Deterministic LP core for the exact transport computations.  Callers cap
instance sizes, so dense pivoting is adequate; Bland's rule rules out
cycling on the (often degenerate) transportation polytopes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["InfeasibleError", "SimplexError", "UnboundedError", "solve_standard_form"]

_TOL = 1e-10


class SimplexError(RuntimeError):
    """The solver failed to make progress."""


class InfeasibleError(SimplexError):
    """No feasible point satisfies the constraints."""


class UnboundedError(SimplexError):
    """The objective is unbounded below on the feasible set."""


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    piv = T[row] / T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, piv)
    T[row] = piv
    T[:, col] = 0.0
    T[row, col] = 1.0


def _pivot_loop(T, c, basis, max_pivots):
    m, width = T.shape
    n = width - 1
    basis = list(basis)
    for _ in range(max_pivots):
        reduced = c - c[basis] @ T[:, :n]
        reduced[basis] = 0.0
        candidates = np.flatnonzero(reduced < -_TOL)
        if candidates.size == 0:
            return T, basis
        j = int(candidates[0])  # Bland: smallest variable index enters
        col = T[:, j]
        pos = col > _TOL
        if not pos.any():
            raise UnboundedError("objective unbounded along an improving ray")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[pos, n] / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + _TOL * (1.0 + abs(rmin)))
        leave = int(min(ties, key=lambda r: basis[r]))  # Bland on ties
        _pivot(T, leave, j)
        rhs = T[:, n]
        rhs[(rhs < 0.0) & (rhs > -1e-11)] = 0.0
        basis[leave] = j
    raise SimplexError("pivot limit exceeded")


def solve_standard_form(c, A, b, basis=None, max_pivots=500_000):
    """min c @ x  subject to  A @ x = b, x >= 0.

    When ``basis`` is given it must index an identity sub-matrix of A with
    b >= 0 (a ready feasible start); otherwise a phase-1 with artificial
    variables runs first.  Returns ``(x, objective)``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).copy()
    c = np.asarray(c, dtype=np.float64)
    m, n = A.shape

    if basis is None:
        flip = b < 0
        A = A.copy()
        A[flip] *= -1.0
        b[flip] *= -1.0
        T = np.hstack([A, np.eye(m), b[:, None]])
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        basis = list(range(n, n + m))
        T, basis = _pivot_loop(T, c1, basis, max_pivots)
        if c1[basis] @ T[:, -1] > 1e-8:
            raise InfeasibleError("phase-1 optimum is positive")
        # drive leftover artificials out of the basis, drop redundant rows
        for r in range(m):
            if basis[r] >= n:
                cols = np.flatnonzero(np.abs(T[r, :n]) > _TOL)
                if cols.size:
                    _pivot(T, r, int(cols[0]))
                    basis[r] = int(cols[0])
        keep = [r for r in range(m) if basis[r] < n]
        T = np.hstack([T[keep][:, :n], T[keep][:, -1:]])
        basis = [basis[r] for r in keep]
    else:
        if (b < 0).any():
            raise InfeasibleError("b must be non-negative with a supplied basis")
        T = np.hstack([A, b[:, None]])
        basis = list(basis)

    T, basis = _pivot_loop(T, c, basis, max_pivots)
    x = np.zeros(n)
    x[basis] = T[:, -1]
    return x, float(c @ x)
