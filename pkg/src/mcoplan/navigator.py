"""Interactive Pareto navigation over a precomputed plan database.

A session holds convex-combination weights alpha over the stored plans.
Slider drags and bound locks translate to tiny LPs in alpha: minimize
the dragged objective's interpolated value subject to the locked upper
bounds, clipped at the requested value. Displayed plan values are always
recomputed exactly from the combined dose; for convex objectives they
never exceed the interpolated LP surrogate, so locked bounds stay
honored in the exact values too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import McoplanError, NavigationError
from .lp import LinearProgram, LpStatus, solve_lp
from .mco import ParetoDatabase, Plan, Provenance, evaluate_objectives
from .phantom import Structure

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class DragResult:
    objective_index: int
    requested: float
    achieved: float  # interpolated value after the drag
    alpha: np.ndarray


@dataclass(frozen=True)
class RestrictReport:
    selected: list[int]
    fallback_added: list[int]  # plans appended to make the locks feasible
    degradation: np.ndarray  # interpolated fvals, restricted minus before


@dataclass
class NavigationSession:
    """Single-writer navigation state over an immutable database."""

    db: ParetoDatabase
    structures: Mapping[str, Structure]
    alpha: np.ndarray = field(init=False)
    upper_bounds: np.ndarray = field(init=False)
    locked: np.ndarray = field(init=False)
    restricted: list[int] | None = field(init=False, default=None)
    last_drag: tuple[int, float] | None = field(init=False, default=None)
    _fmat: np.ndarray = field(init=False)
    _ranges: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.db.n_plans == 0:
            raise NavigationError("cannot navigate an empty database", [])
        n = self.db.n_plans
        self._fmat = self.db.fvals_matrix()
        spread = self._fmat.max(axis=0) - self._fmat.min(axis=0)
        self._ranges = np.where(spread > 1e-12, spread, 1.0)
        self.alpha = np.full(n, 1.0 / n)
        self.upper_bounds = self._fmat.max(axis=0).astype(float)
        self.locked = np.zeros(self.db.n_objectives, dtype=bool)

    # -- read side ---------------------------------------------------------

    def interpolated_fvals(self) -> np.ndarray:
        """Linear interpolation of stored objective vectors (LP surrogate)."""
        return self._fmat.T @ self.alpha

    def combined_dose(self) -> np.ndarray:
        return self.db.dose_matrix().T @ self.alpha

    def combined_intensities(self) -> np.ndarray:
        return np.array([p.x for p in self.db.plans]).T @ self.alpha

    def exact_fvals(self) -> np.ndarray:
        """Objective values recomputed from the combined dose."""
        return evaluate_objectives(self.db.objectives, self.combined_dose(),
                                   self.structures)

    def objective_minima(self) -> np.ndarray:
        return self._fmat.min(axis=0)

    def objective_maxima(self) -> np.ndarray:
        return self._fmat.max(axis=0)

    # -- LP plumbing ---------------------------------------------------------

    def _active(self) -> list[int]:
        return self.restricted if self.restricted is not None else list(range(self.db.n_plans))

    def _blocking_locks(self, active: list[int]) -> list[tuple[int, float, float]]:
        fa = self._fmat[active]
        return [(int(j), float(self.upper_bounds[j]), float(fa[:, j].min()))
                for j in np.flatnonzero(self.locked)]

    def _drag_lp(self, k: int, requested: float, active: list[int],
                 current_interp: float | None) -> np.ndarray:
        """Solve the drag LP over the given plan subset; returns full alpha.

        Raises NavigationError when the locked bounds admit no convex
        combination of the active plans.
        """
        fa = self._fmat[active]
        n = len(active)
        lock_rows = np.flatnonzero(self.locked)
        a_ub = fa[:, lock_rows].T if lock_rows.size else None
        b_ub = self.upper_bounds[lock_rows] if lock_rows.size else None
        a_eq = np.ones((1, n))
        b_eq = np.array([1.0])

        stage1 = solve_lp(LinearProgram(costs=fa[:, k], a_ub=a_ub, b_ub=b_ub,
                                        a_eq=a_eq, b_eq=b_eq))
        if stage1.status is not LpStatus.OPTIMAL:
            raise NavigationError(
                f"locked bounds admit no plan combination (LP {stage1.status.value})",
                self._blocking_locks(active),
            )
        minimum = float(stage1.value)
        target = max(requested, minimum)
        if current_interp is not None:
            target = min(target, current_interp)  # drags never increase f_k
        sub_alpha = stage1.x
        if target > minimum + 1e-12 * max(1.0, abs(minimum)):
            # slack left before the request: spend it restoring the others
            costs = (fa / self._ranges).sum(axis=1) - fa[:, k] / self._ranges[k]
            row = fa[:, k][None, :]
            a2 = row if a_ub is None else np.vstack([a_ub, row])
            b2 = np.array([target]) if b_ub is None else np.concatenate([b_ub, [target]])
            stage2 = solve_lp(LinearProgram(costs=costs, a_ub=a2, b_ub=b2,
                                            a_eq=a_eq, b_eq=b_eq))
            if stage2.status is LpStatus.OPTIMAL:
                sub_alpha = stage2.x
        alpha = np.zeros(self.db.n_plans)
        alpha[active] = sub_alpha
        # clean tiny simplex violations from finite-precision pivots
        alpha = np.maximum(alpha, 0.0)
        alpha /= alpha.sum()
        return alpha

    # -- mutations -----------------------------------------------------------

    def drag_slider(self, objective_index: int, requested_value: float) -> DragResult:
        """Minimize the dragged objective under the locks, clipped at the
        requested value; unlocked objectives float freely."""
        k = int(objective_index)
        if not 0 <= k < self.db.n_objectives:
            raise McoplanError(f"objective index {k} out of range")
        if not np.isfinite(requested_value):
            raise McoplanError("requested value must be finite")
        current = float(self.interpolated_fvals()[k])
        alpha = self._drag_lp(k, float(requested_value), self._active(), current)
        self.alpha = alpha
        self.last_drag = (k, float(requested_value))
        achieved = float(self.interpolated_fvals()[k])
        return DragResult(k, float(requested_value), achieved, alpha.copy())

    def lock_bound(self, objective_index: int, bound: float) -> None:
        """Set an upper bound; re-projects the current plan if it violates.

        The bound must be at least the database minimum for that
        objective; a jointly unsatisfiable lock is rejected and the
        session left unchanged.
        """
        j = int(objective_index)
        dbmin = float(self._fmat[:, j].min())
        if bound < dbmin - _SIMPLEX_TOL:
            raise NavigationError(
                f"bound {bound:.6g} below achievable minimum {dbmin:.6g} "
                f"for objective {self.db.objectives[j].id!r}",
                [(j, float(bound), dbmin)],
            )
        prev_bound = float(self.upper_bounds[j])
        prev_locked = bool(self.locked[j])
        self.upper_bounds[j] = float(bound)
        self.locked[j] = True
        if float(self.interpolated_fvals()[j]) > bound + _SIMPLEX_TOL:
            try:
                alpha = self._drag_lp(j, float(bound), self._active(),
                                      float(self.interpolated_fvals()[j]))
            except NavigationError:
                self.upper_bounds[j] = prev_bound
                self.locked[j] = prev_locked
                raise
            self.alpha = alpha

    def unlock(self, objective_index: int) -> None:
        self.locked[int(objective_index)] = False

    def restrict_active_plans(self, m: int) -> RestrictReport:
        """Greedy support restriction: keep the m plans with largest alpha
        (ties by index), re-solve the last drag on them, and report the
        interpolated-objective degradation against the unrestricted state."""
        n = self.db.n_plans
        if not 1 <= m <= n:
            raise McoplanError(f"active plan count must be in [1, {n}], got {m}")
        before = self.interpolated_fvals()
        if m == n:
            self.restricted = None
            return RestrictReport(list(range(n)), [], np.zeros(self.db.n_objectives))
        order = sorted(range(n), key=lambda i: (-self.alpha[i], i))
        selected = sorted(order[:m])
        pool = order[m:]
        drag = self.last_drag if self.last_drag is not None else (0, float("inf"))
        fallback: list[int] = []
        while True:
            try:
                alpha = self._drag_lp(drag[0], drag[1], selected, None)
                break
            except NavigationError:
                if not pool:
                    raise
                nxt = pool.pop(0)
                fallback.append(nxt)
                selected = sorted(selected + [nxt])
        self.restricted = selected
        self.alpha = alpha
        after = self.interpolated_fvals()
        return RestrictReport(selected, fallback, after - before)

    def export_plan(self) -> Plan:
        """Materialize the navigated plan (exact dose and objective values)."""
        d = self.combined_dose()
        return Plan(
            x=self.combined_intensities(),
            d=d,
            fvals=evaluate_objectives(self.db.objectives, d, self.structures),
            provenance=Provenance.NAVIGATED,
        )

    # -- persistence -----------------------------------------------------------

    def to_state(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "upper_bounds": self.upper_bounds.tolist(),
            "locked": self.locked.tolist(),
            "restricted": self.restricted,
            "last_drag": list(self.last_drag) if self.last_drag else None,
        }

    @classmethod
    def from_state(cls, db: ParetoDatabase, structures: Mapping[str, Structure],
                   state: dict) -> "NavigationSession":
        session = cls(db, structures)
        alpha = np.array(state["alpha"], dtype=float)
        if alpha.shape != session.alpha.shape or np.any(alpha < -_SIMPLEX_TOL) \
                or abs(alpha.sum() - 1.0) > _SIMPLEX_TOL:
            raise McoplanError("saved session state has an invalid alpha")
        session.alpha = np.maximum(alpha, 0.0)
        session.alpha /= session.alpha.sum()
        session.upper_bounds = np.array(state["upper_bounds"], dtype=float)
        session.locked = np.array(state["locked"], dtype=bool)
        session.restricted = state.get("restricted")
        drag = state.get("last_drag")
        session.last_drag = (int(drag[0]), float(drag[1])) if drag else None
        return session


def open_session(db: ParetoDatabase, structures: Mapping[str, Structure]) -> NavigationSession:
    """Uniform-weight session over all stored plans, nothing locked."""
    return NavigationSession(db, structures)
