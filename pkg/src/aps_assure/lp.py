"""Dense two-phase simplex over free variables, used for feasibility checks.

Constraints are affine rows over n real variables: coeffs . x (<=|>=|=) rhs.
Free variables are split into positive parts internally; Bland's rule keeps
the pivot sequence finite and deterministic.  Only feasibility and optional
linear objectives are needed; problems here are small (tens of variables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-7


class LpNumericalError(RuntimeError):
    """Pivoting failed to converge or went numerically unstable."""


@dataclass(frozen=True)
class LinConstraint:
    coeffs: tuple
    cmp: str   # LE | GE | EQ
    rhs: float

    def __post_init__(self):
        if self.cmp not in ("LE", "GE", "EQ"):
            raise ValueError(f"bad comparator {self.cmp!r}")

    def satisfied(self, x, tol: float) -> bool:
        lhs = float(np.dot(self.coeffs, x))
        if self.cmp == "LE":
            return lhs <= self.rhs + tol
        if self.cmp == "GE":
            return lhs >= self.rhs - tol
        return abs(lhs - self.rhs) <= tol


def _pivot(tab, basis, row, col):
    piv = tab[row, col]
    tab[row] /= piv
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r] -= tab[r, col] * tab[row]
    basis[row] = col


def _bland_simplex(tab, basis, n_cols, tol, max_iter):
    """Minimize the objective in the last tableau row; Bland's rule."""
    for _ in range(max_iter):
        enter = -1
        for j in range(n_cols):
            if tab[-1, j] < -tol:
                enter = j
                break
        if enter < 0:
            return
        leave, best = -1, np.inf
        for r in range(tab.shape[0] - 1):
            a = tab[r, enter]
            if a > tol:
                ratio = tab[r, -1] / a
                if ratio < best - tol or (abs(ratio - best) <= tol
                                          and (leave < 0 or basis[r] < basis[leave])):
                    best, leave = ratio, r
        if leave < 0:
            # Unbounded objective; for phase-1/feasibility this cannot occur.
            raise LpNumericalError("unbounded pivot column")
        _pivot(tab, basis, leave, enter)
    raise LpNumericalError("simplex iteration limit exceeded")


def lp_solve(n_vars: int, constraints, objective=None, maximize: bool = False,
             tol: float = DEFAULT_TOL, max_iter: int = 20000):
    """Returns (feasible, point).

    With an objective, the returned point optimizes it over the feasible set;
    without one, any feasible point is returned.  Raises LpNumericalError on
    pivoting trouble (never returns a wrong verdict silently).
    """
    rows = []
    for c in constraints:
        coeffs = np.asarray(c.coeffs, dtype=float)
        if coeffs.shape != (n_vars,):
            raise ValueError(f"constraint arity {coeffs.shape} != {n_vars}")
        if c.cmp == "GE":
            rows.append((-coeffs, "LE", -c.rhs))
        else:
            rows.append((coeffs, c.cmp, c.rhs))
    m = len(rows)
    if m == 0:
        return True, np.zeros(n_vars)

    # Columns: x+ (n), x- (n), slacks (one per LE row), artificials appended.
    n_slack = sum(1 for _, cmp, _ in rows if cmp == "LE")
    n_struct = 2 * n_vars + n_slack
    a = np.zeros((m, n_struct))
    b = np.zeros(m)
    slack_col = 2 * n_vars
    slack_of_row = {}
    for i, (coeffs, cmp, rhs) in enumerate(rows):
        a[i, :n_vars] = coeffs
        a[i, n_vars:2 * n_vars] = -coeffs
        b[i] = rhs
        if cmp == "LE":
            a[i, slack_col] = 1.0
            slack_of_row[i] = slack_col
            slack_col += 1
    # Normalize rhs >= 0.
    for i in range(m):
        if b[i] < 0:
            a[i] *= -1.0
            b[i] *= -1.0
            if i in slack_of_row:
                del slack_of_row[i]  # slack coefficient now -1, not basic

    need_art = [i for i in range(m) if i not in slack_of_row]
    n_art = len(need_art)
    n_cols = n_struct + n_art
    tab = np.zeros((m + 1, n_cols + 1))
    tab[:m, :n_struct] = a
    tab[:m, -1] = b
    basis = [-1] * m
    for i, col in slack_of_row.items():
        basis[i] = col
    for k, i in enumerate(need_art):
        tab[i, n_struct + k] = 1.0
        basis[i] = n_struct + k

    # Phase 1: minimize sum of artificials.
    if n_art:
        tab[-1, n_struct:n_struct + n_art] = 1.0
        for i in need_art:
            tab[-1] -= tab[i]
        _bland_simplex(tab, basis, n_cols, tol, max_iter)
        if tab[-1, -1] < -tol * max(1.0, np.abs(b).max()):
            return False, None
        # Pivot remaining artificials out of the basis where possible.
        for r in range(m):
            if basis[r] >= n_struct:
                for j in range(n_struct):
                    if abs(tab[r, j]) > tol:
                        _pivot(tab, basis, r, j)
                        break
        # Freeze artificial columns.
        tab[:, n_struct:n_cols] = 0.0

    if objective is not None:
        obj = np.asarray(objective, dtype=float)
        if maximize:
            obj = -obj
        tab[-1, :] = 0.0
        tab[-1, :n_vars] = obj
        tab[-1, n_vars:2 * n_vars] = -obj
        for r in range(m):
            col = basis[r]
            if col < n_struct and tab[-1, col] != 0.0:
                tab[-1] -= tab[-1, col] * tab[r]
        _bland_simplex(tab, basis, n_struct, tol, max_iter)

    x_full = np.zeros(n_cols)
    for r, col in enumerate(basis):
        if 0 <= col < n_cols:
            x_full[col] = tab[r, -1]
    point = x_full[:n_vars] - x_full[n_vars:2 * n_vars]
    for c in constraints:
        if not c.satisfied(point, 10 * tol):
            raise LpNumericalError("feasible point fails constraint re-check")
    return True, point


def lp_feasible(n_vars: int, constraints, tol: float = DEFAULT_TOL):
    """Feasibility only: (True, point) or (False, None)."""
    return lp_solve(n_vars, constraints, objective=None, tol=tol)
