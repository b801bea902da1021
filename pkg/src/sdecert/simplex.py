"""Dense two-phase simplex for small inequality-form linear programs.

Solves  min c^T x  subject to  A x <= b  with free variables, by splitting
x = x+ - x- and adding slacks (plus artificials for negative right-hand
sides).  Dantzig pricing with an automatic switch to Bland's rule after a
stall guards against cycling on degenerate scenario programs.  Problem sizes
here stay small because the caller works with an active subset of
constraints (at a vertex at most n_vars + 1 rows bind).
"""

from __future__ import annotations

import numpy as np

__all__ = ["solve_lp_ineq", "LPSolution"]


class LPSolution:
    __slots__ = ("status", "x", "objective", "iterations")

    def __init__(self, status, x=None, objective=None, iterations=0):
        self.status = status          # optimal | infeasible | unbounded
        self.x = x
        self.objective = objective
        self.iterations = iterations


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    piv = T[row]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, piv)
    basis[row] = col


def _run_simplex(T, basis, allowed, tol, max_iter):
    """Minimize the last row's objective on tableau T (last column = rhs)."""
    m = T.shape[0] - 1
    stall = 0
    last_obj = T[-1, -1]
    bland = False
    for it in range(max_iter):
        rc = T[-1, :-1]
        if bland:
            cand = np.flatnonzero((rc < -tol) & allowed)
            if cand.size == 0:
                return "optimal", it
            col = int(cand[0])
        else:
            masked = np.where(allowed, rc, np.inf)
            col = int(np.argmin(masked))
            if masked[col] >= -tol:
                return "optimal", it
        colvals = T[:m, col]
        pos = colvals > tol
        if not np.any(pos):
            return "unbounded", it
        ratios = np.where(pos, T[:m, -1] / np.where(pos, colvals, 1.0), np.inf)
        best = ratios.min()
        rows = np.flatnonzero(ratios <= best + tol)
        # leaving-variable tie break by smallest basis index (Bland-safe)
        row = int(rows[np.argmin([basis[r] for r in rows])])
        _pivot(T, basis, row, col)
        obj = T[-1, -1]
        if obj > last_obj - 1e-12:
            stall += 1
            if stall > 50:
                bland = True
        else:
            stall = 0
        last_obj = obj
    return "iteration_limit", max_iter


def solve_lp_ineq(c, A, b, tol: float = 1e-9,
                  max_iter: int = 20000) -> LPSolution:
    """min c.x subject to A x <= b, x free."""
    c = np.asarray(c, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if m == 0:
        return LPSolution("unbounded" if np.any(c != 0) else "optimal",
                          np.zeros(n), 0.0)

    flip = b < 0
    A2 = np.where(flip[:, None], -A, A)
    b2 = np.where(flip, -b, b)
    slack_sign = np.where(flip, -1.0, 1.0)

    n_art = int(flip.sum())
    ncols = 2 * n + m + n_art
    T = np.zeros((m + 1, ncols + 1))
    T[:m, :n] = A2
    T[:m, n:2 * n] = -A2
    T[np.arange(m), 2 * n + np.arange(m)] = slack_sign
    T[:m, -1] = b2
    basis = np.empty(m, dtype=np.intp)
    art_cols = []
    k = 0
    for i in range(m):
        if flip[i]:
            col = 2 * n + m + k
            T[i, col] = 1.0
            basis[i] = col
            art_cols.append(col)
            k += 1
        else:
            basis[i] = 2 * n + i
    art_cols = np.asarray(art_cols, dtype=np.intp)

    allowed = np.ones(ncols, dtype=bool)
    iterations = 0
    if n_art:
        # phase 1: minimize the sum of artificials
        T[-1, :] = 0.0
        T[-1, art_cols] = 1.0
        for i in range(m):
            if flip[i]:
                T[-1, :] -= T[i, :]
        status, it1 = _run_simplex(T, basis, allowed, tol, max_iter)
        iterations += it1
        if status != "optimal" or -T[-1, -1] > 1e-7:
            return LPSolution("infeasible", iterations=iterations)
        # pivot any residual artificial out of the basis if possible
        for i in range(m):
            if basis[i] in art_cols:
                nz = np.flatnonzero(np.abs(T[i, :2 * n + m]) > tol)
                if nz.size:
                    _pivot(T, basis, i, int(nz[0]))
        allowed[art_cols] = False

    # phase 2: original objective
    T[-1, :] = 0.0
    T[-1, :n] = c
    T[-1, n:2 * n] = -c
    for i in range(m):
        cb = T[-1, basis[i]]
        if cb != 0.0:
            T[-1, :] -= cb * T[i, :]
    status, it2 = _run_simplex(T, basis, allowed, tol, max_iter)
    iterations += it2
    if status == "unbounded":
        return LPSolution("unbounded", iterations=iterations)
    if status != "optimal":
        return LPSolution("iteration_limit", iterations=iterations)

    full = np.zeros(ncols)
    full[basis] = T[:m, -1]
    x = full[:n] - full[n:2 * n]
    return LPSolution("optimal", x, float(c @ x), iterations)
