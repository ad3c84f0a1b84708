"""A small dense two-phase simplex solver.

Sized for the weight-selection programs this package produces (tens of
variables and rows), so there is no sparsity, no presolve, and no scaling;
reduced costs are recomputed from the tableau every pivot.  Bland's rule
keeps pivoting deterministic and free of cycling.
"""

from __future__ import annotations

import numpy as np

_TOL = 1e-9


class LPError(Exception):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


def _pivot_until_optimal(tableau: np.ndarray, basis: np.ndarray, costs: np.ndarray,
                         allowed: int) -> None:
    """Run minimizing simplex pivots in place (Bland's rule)."""
    m = tableau.shape[0]
    while True:
        reduced = costs - costs[basis] @ tableau[:, :costs.size]
        entering = -1
        for j in range(allowed):
            if reduced[j] < -_TOL:
                entering = j
                break
        if entering < 0:
            return
        col = tableau[:, entering]
        best = np.inf
        leave = -1
        for i in range(m):
            if col[i] > _TOL:
                ratio = tableau[i, -1] / col[i]
                if ratio < best - _TOL:
                    best = ratio
                    leave = i
                elif ratio < best + _TOL and leave >= 0 and basis[i] < basis[leave]:
                    leave = i
        if leave < 0:
            raise Unbounded("objective unbounded")
        tableau[leave] /= tableau[leave, entering]
        for i in range(m):
            if i != leave and tableau[i, entering] != 0.0:
                tableau[i] -= tableau[i, entering] * tableau[leave]
        basis[leave] = entering


def solve_lp(objective: np.ndarray,
             a_ub: np.ndarray | None = None, b_ub: np.ndarray | None = None,
             a_eq: np.ndarray | None = None, b_eq: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Maximize objective @ x subject to a_ub x <= b_ub, a_eq x = b_eq, x >= 0.

    Returns (x, value).  Raises Infeasible or Unbounded.
    """
    c_user = np.asarray(objective, dtype=float)
    n = c_user.size
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    n_ub = 0
    if a_ub is not None:
        a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
        for i in range(a_ub.shape[0]):
            rows.append(a_ub[i])
            rhs.append(float(np.atleast_1d(b_ub)[i]))
        n_ub = a_ub.shape[0]
    if a_eq is not None:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
        for i in range(a_eq.shape[0]):
            rows.append(a_eq[i])
            rhs.append(float(np.atleast_1d(b_eq)[i]))
    m = len(rows)
    if m == 0:
        raise LPError("no constraints given")

    # Columns: n user vars, n_ub slacks, then artificials as needed.
    a = np.zeros((m, n + n_ub))
    b = np.array(rhs)
    for i, row in enumerate(rows):
        if row.size != n:
            raise LPError(f"constraint row {i} has {row.size} coefficients, expected {n}")
        a[i, :n] = row
    for i in range(n_ub):
        a[i, n + i] = 1.0
    flip = b < 0
    a[flip] *= -1.0
    b[flip] *= -1.0

    basis = np.full(m, -1, dtype=int)
    for i in range(n_ub):
        if not flip[i]:
            basis[i] = n + i
    art_rows = [i for i in range(m) if basis[i] < 0]
    n_cols = n + n_ub + len(art_rows)
    tableau = np.zeros((m, n_cols + 1))
    tableau[:, :n + n_ub] = a
    tableau[:, -1] = b
    for k, i in enumerate(art_rows):
        tableau[i, n + n_ub + k] = 1.0
        basis[i] = n + n_ub + k

    if art_rows:
        phase1 = np.zeros(n_cols)
        phase1[n + n_ub:] = 1.0
        _pivot_until_optimal(tableau, basis, phase1, allowed=n + n_ub)
        residual = float(phase1[basis] @ tableau[:, -1])
        if residual > 1e-7:
            raise Infeasible(f"phase 1 residual {residual:.3g}")
        for i in range(m):
            if basis[i] >= n + n_ub:  # degenerate artificial still basic
                for j in range(n + n_ub):
                    if abs(tableau[i, j]) > _TOL:
                        tableau[i] /= tableau[i, j]
                        for r in range(m):
                            if r != i and tableau[r, j] != 0.0:
                                tableau[r] -= tableau[r, j] * tableau[i]
                        basis[i] = j
                        break

    phase2 = np.zeros(n_cols)
    phase2[:n] = -c_user  # maximize user objective = minimize its negation
    _pivot_until_optimal(tableau, basis, phase2, allowed=n + n_ub)

    x = np.zeros(n_cols)
    x[basis] = tableau[:, -1]
    return x[:n].copy(), float(c_user @ x[:n])
