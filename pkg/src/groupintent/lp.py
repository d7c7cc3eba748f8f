"""Dense two-phase simplex solver.

Small, deterministic LP solver used by the nucleolus computation.  Problems
are tiny (at most a few hundred constraints), so a dense tableau with Bland's
anti-cycling rule is both fast enough and reproducible across platforms.

Standard form solved here:

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                x >= 0
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TOL = 1e-9


class LPError(Exception):
    """Base class for solver failures."""


class LPInfeasibleError(LPError):
    """The constraint set admits no feasible point."""


class LPUnboundedError(LPError):
    """The objective is unbounded below on the feasible set."""


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    value: float


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _simplex(tableau: np.ndarray, basis: list[int], n_cols: int) -> None:
    """Run Bland-rule simplex iterations in place.

    The last row of `tableau` holds reduced costs (objective to minimize),
    the last column holds the RHS.  `basis[i]` is the basic column of row i.
    """
    max_iter = 50 * (tableau.shape[0] + n_cols)
    for _ in range(max_iter):
        costs = tableau[-1, :n_cols]
        entering_candidates = np.nonzero(costs < -_TOL)[0]
        if entering_candidates.size == 0:
            return
        col = int(entering_candidates[0])  # Bland: smallest index
        column = tableau[:-1, col]
        rows = np.nonzero(column > _TOL)[0]
        if rows.size == 0:
            raise LPUnboundedError("objective unbounded along column %d" % col)
        ratios = tableau[rows, -1] / column[rows]
        best = ratios.min()
        # Bland tie-break: among minimum ratios, leave the smallest basis index.
        tied = rows[np.nonzero(ratios <= best + _TOL)[0]]
        row = int(min(tied, key=lambda r: basis[r]))
        _pivot(tableau, row, col)
        basis[row] = col
    raise LPError("simplex iteration limit exceeded")


def solve_lp(
    c: np.ndarray,
    a_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
) -> LPResult:
    """Solve min c@x s.t. a_ub@x <= b_ub, a_eq@x == b_eq, x >= 0."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if a_ub is None:
        a_ub = np.zeros((0, n))
        b_ub = np.zeros(0)
    if a_eq is None:
        a_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
    a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_ub = np.asarray(b_ub, dtype=float)
    b_eq = np.asarray(b_eq, dtype=float)
    m_ub, m_eq = a_ub.shape[0], a_eq.shape[0]
    m = m_ub + m_eq

    # Columns: [x (n) | slacks (m_ub) | artificials (m)]
    a = np.zeros((m, n + m_ub + m))
    b = np.concatenate([b_ub, b_eq])
    a[:m_ub, :n] = a_ub
    a[m_ub:, :n] = a_eq
    a[:m_ub, n : n + m_ub] = np.eye(m_ub)
    # Normalize RHS to be nonnegative before adding artificials.
    neg = b < 0
    a[neg] *= -1.0
    b = np.abs(b)
    a[:, n + m_ub :] = np.eye(m)

    n_struct = n + m_ub  # structural + slack columns

    # Phase 1: minimize the sum of artificials.
    tableau = np.zeros((m + 1, n_struct + m + 1))
    tableau[:m, :-1] = a
    tableau[:m, -1] = b
    tableau[-1, n_struct : n_struct + m] = 1.0
    basis = list(range(n_struct, n_struct + m))
    for r in range(m):  # price out the artificial basis
        tableau[-1] -= tableau[r]
    _simplex(tableau, basis, n_struct)
    if tableau[-1, -1] < -1e-7:
        raise LPInfeasibleError("phase-1 optimum %.3g below zero" % -tableau[-1, -1])

    # Drive artificials out of the basis where possible.
    for r in range(m):
        if basis[r] >= n_struct:
            pivots = np.nonzero(np.abs(tableau[r, :n_struct]) > _TOL)[0]
            if pivots.size:
                _pivot(tableau, r, int(pivots[0]))
                basis[r] = int(pivots[0])

    # Phase 2 on the structural columns only.
    keep_rows = [r for r in range(m) if basis[r] < n_struct]
    phase2 = np.zeros((len(keep_rows) + 1, n_struct + 1))
    phase2[:-1, :n_struct] = tableau[keep_rows, :n_struct]
    phase2[:-1, -1] = tableau[keep_rows, -1]
    basis2 = [basis[r] for r in keep_rows]
    phase2[-1, :n] = c
    for i, col in enumerate(basis2):  # price out current basis
        phase2[-1] -= phase2[-1, col] * phase2[i]
    _simplex(phase2, basis2, n_struct)

    x = np.zeros(n_struct)
    for i, col in enumerate(basis2):
        x[col] = phase2[i, -1]
    solution = x[:n]
    return LPResult(x=solution, value=float(c @ solution))
