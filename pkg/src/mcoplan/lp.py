"""Small dense linear programs, solved by a two-phase primal simplex.

Scale target is tens of variables (navigation weights, sandwich outer
bounds), so a dense tableau with Bland's anti-cycling rule is simple,
exact enough (feasibility residuals ~1e-12), fully deterministic, and
returns an optimal *basic* feasible solution. Lower bounds must be
finite (default 0); upper bounds may be +inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import McoplanError

_TOL = 1e-10


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    """min costs @ x  s.t.  a_ub @ x <= b_ub,  a_eq @ x = b_eq,
    lower <= x <= upper."""

    costs: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None  # default zeros; must be finite
    upper: np.ndarray | None = None  # default +inf

    def dimensions(self) -> tuple[int, int, int]:
        n = len(self.costs)
        mu = 0 if self.a_ub is None else self.a_ub.shape[0]
        me = 0 if self.a_eq is None else self.a_eq.shape[0]
        if self.a_ub is not None and (self.a_ub.shape[1] != n or len(self.b_ub) != mu):
            raise McoplanError("inconsistent inequality dimensions")
        if self.a_eq is not None and (self.a_eq.shape[1] != n or len(self.b_eq) != me):
            raise McoplanError("inconsistent equality dimensions")
        return n, mu, me


@dataclass(frozen=True)
class LpResult:
    status: LpStatus
    x: np.ndarray | None = None
    value: float | None = None
    dual_value: float | None = None  # for duality-gap checks


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for i in range(tab.shape[0]):
        if i != row and abs(tab[i, col]) > 0.0:
            tab[i] -= tab[i, col] * tab[row]
    basis[row] = col


def _bland_iterate(tab: np.ndarray, basis: np.ndarray, n_pivot_cols: int) -> str:
    """Run simplex pivots on a tableau whose last row is the cost row.

    Returns "optimal" or "unbounded". Entering variable: lowest index
    with negative reduced cost; leaving: lowest basic index among the
    minimum-ratio rows (Bland's rule, no cycling).
    """
    m = tab.shape[0] - 1
    while True:
        cost = tab[-1, :n_pivot_cols]
        candidates = np.flatnonzero(cost < -_TOL)
        if candidates.size == 0:
            return "optimal"
        col = int(candidates[0])
        colvals = tab[:m, col]
        rows = np.flatnonzero(colvals > _TOL)
        if rows.size == 0:
            return "unbounded"
        ratios = tab[rows, -1] / colvals[rows]
        best = ratios.min()
        tied = rows[np.flatnonzero(ratios <= best + _TOL * max(1.0, abs(best)))]
        row = int(tied[np.argmin(basis[tied])])
        _pivot(tab, basis, row, col)


def solve_lp(lp: LinearProgram) -> LpResult:
    """Two-phase simplex. Infeasible/unbounded reported via status."""
    n, mu, me = lp.dimensions()
    costs = np.asarray(lp.costs, dtype=float)
    lower = np.zeros(n) if lp.lower is None else np.asarray(lp.lower, dtype=float)
    upper = np.full(n, np.inf) if lp.upper is None else np.asarray(lp.upper, dtype=float)
    if not np.all(np.isfinite(lower)):
        raise McoplanError("lower bounds must be finite")

    # shift to z = x - lower >= 0 and fold finite upper bounds into rows
    const = float(costs @ lower)
    rows_a: list[np.ndarray] = []
    rows_b: list[float] = []
    n_ineq = 0
    if mu:
        shifted = np.asarray(lp.b_ub, dtype=float) - lp.a_ub @ lower
        for i in range(mu):
            rows_a.append(np.asarray(lp.a_ub[i], dtype=float))
            rows_b.append(float(shifted[i]))
            n_ineq += 1
    for j in np.flatnonzero(np.isfinite(upper)):
        e = np.zeros(n)
        e[j] = 1.0
        rows_a.append(e)
        rows_b.append(float(upper[j] - lower[j]))
        n_ineq += 1
    if me:
        shifted = np.asarray(lp.b_eq, dtype=float) - lp.a_eq @ lower
        for i in range(me):
            rows_a.append(np.asarray(lp.a_eq[i], dtype=float))
            rows_b.append(float(shifted[i]))

    m = len(rows_a)
    if m == 0:
        # only x >= lower: bounded iff costs >= 0 on every coordinate
        if np.any(costs < -_TOL):
            return LpResult(LpStatus.UNBOUNDED)
        return LpResult(LpStatus.OPTIMAL, x=lower.copy(), value=const, dual_value=const)

    a = np.zeros((m, n + n_ineq))
    b = np.array(rows_b, dtype=float)
    for i, row in enumerate(rows_a):
        a[i, :n] = row
        if i < n_ineq:
            a[i, n + i] = 1.0  # slack
    neg = b < 0
    a[neg] *= -1.0
    b[neg] *= -1.0

    n_real = n + n_ineq  # structural + slack columns
    a0 = a.copy()
    b0 = b.copy()

    # phase 1 tableau: [A | I_art | b] plus artificial cost row
    tab = np.zeros((m + 1, n_real + m + 1))
    tab[:m, :n_real] = a
    tab[:m, n_real:n_real + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n_real] = -a.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = np.arange(n_real, n_real + m)

    status = _bland_iterate(tab, basis, n_real + m)
    if status != "optimal" or -tab[-1, -1] > 1e-8 * max(1.0, abs(b0).max()):
        return LpResult(LpStatus.INFEASIBLE)

    # drive leftover artificials out of the basis; drop redundant rows
    keep_rows = []
    for i in range(m):
        if basis[i] < n_real:
            keep_rows.append(i)
            continue
        pivots = np.flatnonzero(np.abs(tab[i, :n_real]) > 1e-9)
        if pivots.size:
            _pivot(tab, basis, i, int(pivots[0]))
            keep_rows.append(i)
        # else: redundant row, dropped below

    rows_idx = np.array(keep_rows, dtype=int)
    phase2 = np.zeros((len(rows_idx) + 1, n_real + 1))
    phase2[:-1, :n_real] = tab[rows_idx][:, :n_real]
    phase2[:-1, -1] = tab[rows_idx][:, -1]
    basis2 = basis[rows_idx].copy()

    c2 = np.zeros(n_real)
    c2[:n] = costs
    phase2[-1, :n_real] = c2
    for i, bcol in enumerate(basis2):
        if c2[bcol] != 0.0:
            phase2[-1] -= c2[bcol] * phase2[i]

    status = _bland_iterate(phase2, basis2, n_real)
    if status == "unbounded":
        return LpResult(LpStatus.UNBOUNDED)

    z = np.zeros(n_real)
    z[basis2] = phase2[:-1, -1]
    x = lower + z[:n]
    value = float(costs @ x)

    # dual value from the final basis for duality-gap checks
    dual_value = None
    bmat = a0[rows_idx][:, basis2]
    try:
        y = np.linalg.solve(bmat.T, c2[basis2])
        dual_value = float(y @ b0[rows_idx]) + const
    except np.linalg.LinAlgError:
        pass
    return LpResult(LpStatus.OPTIMAL, x=x, value=value, dual_value=dual_value)
