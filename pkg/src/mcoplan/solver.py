"""Convex fluence-map solver.

Minimizes a nonnegative weighted sum of convex dose objectives over
beamlet intensities x >= 0, subject to hard linear dose constraints and
optional upper caps on other objectives' values.

Method: an augmented-Lagrangian outer loop over the constraints; each
inner smooth minimization alternates spectral projected-gradient sweeps
(Barzilai-Borwein steps, which identify the active bounds fast) with a
trust-region Newton-CG polish on the strictly positive face, which is
what makes tight stationarity tolerances affordable on ill-conditioned
fluence problems. An exterior feasibility phase runs first whenever the
start violates the constraints and doubles as the infeasibility
detector.

Goal-programming hinge terms max(0, f_j - g_j) are supported through a
Moreau-envelope smoothing with internal continuation, so the whole
toolkit needs exactly one optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dinf import DoseInfluenceMatrix
from .errors import InfeasibleError, McoplanError
from .metrics import (
    ConstraintKind,
    ConstraintSpec,
    ObjectiveSpec,
    evaluate_on_structure,
    gradient_on_structure,
    hessian_diag_on_structure,
    hessian_vec_on_structure,
)
from .phantom import Structure


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration caps; configurable via case JSON / CLI."""

    max_iters: int = 2000  # total gradient/CG-step budget across all phases
    stat_tol_rel: float = 1e-6  # stationarity relative to the initial point
    stat_tol_abs: float = 1e-12
    feas_tol: float = 0.01  # Gy for dose constraints, native units for caps
    feas_target_factor: float = 1e-3  # internal aim: feas_tol * factor
    penalty_init: float = 1.0
    penalty_growth: float = 5.0
    max_al_rounds: int = 40
    goal_mu_final: float = 1e-6  # final Moreau smoothing for goal hinges
    # light ridge on x: collapses the huge null flats of fluence problems
    # (beamlets the objectives cannot see) so the optimum is unique and
    # active-set identification converges; the objective bias is O(1e-8)
    tikhonov: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1 or self.stat_tol_rel <= 0 or self.feas_tol <= 0:
            raise McoplanError("solver options must be positive")


@dataclass(frozen=True)
class ObjectiveCap:
    """Upper bound on an objective's value (epsilon-constraint style)."""

    objective: ObjectiveSpec
    upper: float

    @property
    def label(self) -> str:
        return f"cap:{self.objective.id}"


@dataclass(frozen=True)
class GoalTerm:
    """One goal-programming slack term: weight * max(0, f(d) - goal)."""

    objective: ObjectiveSpec
    goal: float
    weight: float = 1.0


@dataclass
class ConvexProblem:
    """One single-objective convex solve over beamlet intensities."""

    dinf: DoseInfluenceMatrix
    structures: Mapping[str, Structure]
    terms: list[tuple[float, ObjectiveSpec]] = field(default_factory=list)
    objective_caps: list[ObjectiveCap] = field(default_factory=list)
    constraints: list[ConstraintSpec] = field(default_factory=list)
    goal_terms: list[GoalTerm] = field(default_factory=list)
    x0: np.ndarray | None = None
    fixed_zero: np.ndarray | None = None  # bool mask of columns pinned to 0
    cap_dual_hints: np.ndarray | None = None  # warm-start multipliers per cap

    def validate(self) -> None:
        has_term = any(w > 0 for w, _ in self.terms) or any(
            g.weight > 0 for g in self.goal_terms
        )
        if not has_term:
            raise McoplanError("problem needs at least one term with positive weight")
        for w, _ in self.terms:
            if not np.isfinite(w) or w < 0:
                raise McoplanError(f"term weight must be finite and >= 0, got {w}")


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    d: np.ndarray
    objective_value: float
    stationarity: float
    constraint_violation_gy: float
    iterations: int
    converged: bool
    cap_duals: np.ndarray | None = None  # final cap multipliers, for chaining


# ---------------------------------------------------------------------------
# scalar-constraint blocks for the augmented Lagrangian


class _Block:
    """A group of scalar inequality constraints g(d) <= 0 with multipliers."""

    label: str
    n_scalars: int

    def residuals(self, d: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def add_gradient(self, d: np.ndarray, coefs: np.ndarray, dose_grad: np.ndarray) -> None:
        """Accumulate sum_k coefs[k] * grad g_k(d) into dose_grad."""
        raise NotImplementedError

    def hessvec_state(self, d_ref: np.ndarray, lam: np.ndarray, rho: float):
        """Precompute whatever the AL Hessian-vector product needs at d_ref."""
        raise NotImplementedError

    def add_hessvec(self, state, u: np.ndarray, res: np.ndarray) -> None:
        """Accumulate the AL term's dose-space H @ u into res."""
        raise NotImplementedError

    def add_hessdiag(self, state, w: np.ndarray) -> None:
        """Accumulate (an approximation of) the AL term's dose-space
        Hessian diagonal into w, for Jacobi preconditioning."""
        raise NotImplementedError


class _DoseBlock(_Block):
    def __init__(self, spec: ConstraintSpec, structures: Mapping[str, Structure]):
        self.spec = spec
        self.label = spec.id
        self.idx = structures[spec.structure].voxel_indices
        self.n_scalars = 1 if spec.kind is ConstraintKind.MEAN_DOSE else self.idx.size

    def residuals(self, d):
        ds = d[self.idx]
        k = self.spec.kind
        if k is ConstraintKind.MAX_DOSE:
            return ds - self.spec.bound_gy
        if k is ConstraintKind.MIN_DOSE:
            return self.spec.bound_gy - ds
        return np.array([ds.mean() - self.spec.bound_gy])

    def add_gradient(self, d, coefs, dose_grad):
        k = self.spec.kind
        if k is ConstraintKind.MAX_DOSE:
            dose_grad[self.idx] += coefs
        elif k is ConstraintKind.MIN_DOSE:
            dose_grad[self.idx] -= coefs
        else:
            dose_grad[self.idx] += coefs[0] / self.idx.size

    def hessvec_state(self, d_ref, lam, rho):
        active = (lam + rho * self.residuals(d_ref)) > 0
        return active, rho

    def add_hessvec(self, state, u, res):
        active, rho = state
        if self.spec.kind is ConstraintKind.MEAN_DOSE:
            if active[0]:
                m = self.idx.size
                res[self.idx] += (rho / (m * m)) * u[self.idx].sum()
        else:
            # MAX and MIN both give +rho on active voxels (sign squared)
            res[self.idx] += np.where(active, rho * u[self.idx], 0.0)

    def add_hessdiag(self, state, w):
        active, rho = state
        if self.spec.kind is ConstraintKind.MEAN_DOSE:
            if active[0]:
                m = self.idx.size
                w[self.idx] += rho / (m * m)
        else:
            w[self.idx] += np.where(active, rho, 0.0)


class _CapBlock(_Block):
    def __init__(self, cap: ObjectiveCap, structures: Mapping[str, Structure]):
        self.cap = cap
        self.label = cap.label
        self.idx = structures[cap.objective.structure].voxel_indices
        self.n_scalars = 1

    def residuals(self, d):
        return np.array([evaluate_on_structure(self.cap.objective, d[self.idx]) - self.cap.upper])

    def add_gradient(self, d, coefs, dose_grad):
        dose_grad[self.idx] += coefs[0] * gradient_on_structure(self.cap.objective, d[self.idx])

    def hessvec_state(self, d_ref, lam, rho):
        ds = d_ref[self.idx]
        shifted = float(lam[0] + rho * self.residuals(d_ref)[0])
        if shifted <= 0:
            return None
        return ds, gradient_on_structure(self.cap.objective, ds), shifted, rho

    def add_hessvec(self, state, u, res):
        if state is None:
            return
        ds, grad, shifted, rho = state
        us = u[self.idx]
        res[self.idx] += rho * (grad @ us) * grad
        res[self.idx] += shifted * hessian_vec_on_structure(self.cap.objective, ds, us)

    def add_hessdiag(self, state, w):
        if state is None:
            return
        ds, grad, shifted, rho = state
        w[self.idx] += rho * grad * grad
        w[self.idx] += shifted * hessian_diag_on_structure(self.cap.objective, ds)


# ---------------------------------------------------------------------------
# inner smooth minimization: FISTA sweeps + projected Newton-CG polish


def _power_iteration_norm_sq(matrix, n_iter: int = 12) -> float:
    """Deterministic estimate of ||D||_2^2 via power iteration on D^T D."""
    n = matrix.shape[1]
    v = np.ones(n) / np.sqrt(n)
    lam = 1.0
    for _ in range(n_iter):
        w = matrix.T @ (matrix @ v)
        lam = float(np.linalg.norm(w))
        if lam <= 0:
            return 1.0
        v = w / lam
    return lam


def _make_projector(fixed_zero: np.ndarray | None):
    if fixed_zero is None:
        return lambda x: np.maximum(x, 0.0)

    def proj(x: np.ndarray) -> np.ndarray:
        out = np.maximum(x, 0.0)
        out[fixed_zero] = 0.0
        return out

    return proj


def _spg(fg, x0: np.ndarray, proj, L0: float, max_iter: int,
         pg_tol: float) -> tuple[np.ndarray, float, int]:
    """Spectral projected gradient (Barzilai-Borwein steps, nonmonotone
    Armijo over the last 10 values). Identifies the active face fast on
    ill-conditioned bound-constrained problems."""
    x = proj(x0.copy())
    fx, gx = fg(x)
    pg_vec = x - proj(x - gx)
    pg = float(np.linalg.norm(pg_vec, np.inf))
    if pg <= pg_tol or max_iter <= 0:
        return x, pg, 0
    step = 1.0 / max(L0, 1e-12)
    history = [fx]
    used = 0
    while used < max_iter:
        used += 1
        f_ref = max(history[-10:])
        t = step
        accepted = False
        for _bt in range(40):
            xn = proj(x - t * gx)
            diff = xn - x
            gain = float(gx @ diff)
            if gain >= 0.0:
                break  # at stationarity for this direction
            fn, gn = fg(xn)
            if fn <= f_ref + 1e-4 * gain:
                accepted = True
                break
            t *= 0.3
        if not accepted:
            _, gx = fg(x)
            pg = float(np.linalg.norm(x - proj(x - gx), np.inf))
            return x, pg, used
        s = xn - x
        y = gn - gx
        sy = float(s @ y)
        ss = float(s @ s)
        step = min(max(ss / sy if sy > 1e-18 else 1e4 * step, 1e-14), 1e14)
        x, fx, gx = xn, fn, gn
        history.append(fx)
        pg = float(np.linalg.norm(x - proj(x - gx), np.inf))
        if pg <= pg_tol:
            return x, pg, used
    return x, pg, used


def _steihaug(apply_h, g: np.ndarray, delta: float, tol_rel: float = 0.01,
              max_iter: int = 250) -> tuple[np.ndarray, float, int, bool]:
    """Trust-region CG (Steihaug): approximately minimize
    g . p + p . H p / 2 over ||p|| <= delta.

    Returns (p, predicted_decrease, iterations, hit_boundary).
    """
    n = g.size
    p = np.zeros(n)
    r = -g.copy()
    d = r.copy()
    rs = float(r @ r)
    g_norm = np.sqrt(rs)
    pred = 0.0
    if g_norm == 0.0:
        return p, pred, 0, False

    def to_boundary(pv, dv):
        # tau >= 0 with ||pv + tau dv|| = delta
        a = float(dv @ dv)
        b = 2.0 * float(pv @ dv)
        c = float(pv @ pv) - delta * delta
        tau = (-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
        return pv + tau * dv

    used = 0
    for _ in range(max_iter):
        used += 1
        hd = apply_h(d)
        dhd = float(d @ hd)
        if dhd <= 1e-16 * float(d @ d):
            p_new = to_boundary(p, d)
            pred = -(float(g @ p_new))  # curvature ~0 along the tail
            return p_new, max(pred, 0.0), used, True
        alpha = rs / dhd
        p_next = p + alpha * d
        if float(p_next @ p_next) >= delta * delta:
            p_new = to_boundary(p, d)
            hp = apply_h(p_new)
            pred = -(float(g @ p_new) + 0.5 * float(p_new @ hp))
            return p_new, max(pred, 0.0), used + 1, True
        p = p_next
        r -= alpha * hd
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol_rel * g_norm:
            break
        d = r + (rs_new / rs) * d
        rs = rs_new
    hp = apply_h(p)
    pred = -(float(g @ p) + 0.5 * float(p @ hp))
    return p, max(pred, 0.0), used + 1, False


def _newton_face(fg, hv_at, diag_at, x: np.ndarray, proj, pg_tol: float,
                 budget: int,
                 fixed_zero: np.ndarray | None) -> tuple[np.ndarray, float, int, bool]:
    """Trust-region Newton-CG rounds on the strictly positive face,
    Jacobi-scaled. Bound identification is the PG sweeps' job; this
    routine only finishes the face, so the quadratic model stays honest.
    """
    used = 0
    fx, g = fg(x)
    used += 1
    pg = float(np.linalg.norm(x - proj(x - g), np.inf))
    delta = None
    progressed = False
    for _round in range(40):
        if pg <= pg_tol or used >= budget:
            return x, pg, used, True
        free = x > 0
        if fixed_zero is not None:
            free &= ~fixed_zero
        idx = np.flatnonzero(free)
        if idx.size == 0:
            return x, pg, used, progressed
        hv = hv_at(x)
        dia = diag_at(x)[idx]
        # a generous floor keeps near-null coordinates from blowing up the
        # raw step (double 1/sqrt amplification) into constraint walls the
        # frozen model cannot see
        floor = max(1e-3 * float(dia.max(initial=0.0)), 1e-16)
        sq = np.sqrt(dia + floor)
        gs = g[idx] / sq
        face_norm = float(np.linalg.norm(gs, np.inf))
        if face_norm <= 0.0:
            return x, pg, used, progressed

        def apply_scaled(v):
            vf = np.zeros_like(x)
            vf[idx] = v / sq
            return hv(vf)[idx] / sq

        if delta is None:
            delta = max(1.0, float(np.linalg.norm(gs)))
        accepted = False
        while used < budget:
            p_s, pred, cg_used, hit = _steihaug(
                apply_scaled, gs, delta, max_iter=min(250, max(10, budget - used)))
            used += cg_used
            if pred <= 1e-15 * max(1.0, abs(fx)):
                return x, pg, used, progressed  # face model exhausted
            xn = x.copy()
            xn[idx] = x[idx] + p_s / sq
            xn = proj(xn)
            fn, gn = fg(xn)
            used += 1
            ratio = (fx - fn) / pred
            if fn < fx and ratio > 0.01:
                x, fx, g = xn, fn, gn
                pg = float(np.linalg.norm(x - proj(x - g), np.inf))
                if ratio > 0.7 and hit:
                    delta *= 2.0
                elif ratio < 0.25:
                    delta *= 0.5
                accepted = True
                progressed = True
                break
            delta *= 0.25
            if delta < 1e-13:
                return x, pg, used, progressed
        if not accepted:
            return x, pg, used, progressed
    return x, pg, used, progressed


def _minimize_smooth(fg, hv_at, diag_at, x: np.ndarray, proj, L0: float,
                     pg_tol: float, budget: int,
                     fixed_zero: np.ndarray | None) -> tuple[np.ndarray, float, int]:
    """Alternate SPG sweeps (bound identification) with Newton face polish."""
    used = 0
    pg = np.inf
    sweep = 60
    for _cycle in range(40):
        if used >= budget:
            break
        x, pg, n1 = _spg(fg, x, proj, L0, min(sweep, budget - used), pg_tol)
        used += n1
        if pg <= pg_tol or used >= budget:
            break
        x, pg, n2, progressed = _newton_face(fg, hv_at, diag_at, x, proj, pg_tol,
                                             budget - used, fixed_zero)
        used += n2
        if pg <= pg_tol or used >= budget:
            break
        if not progressed:
            sweep = min(2 * sweep, 400)  # polish stalled; lean on SPG
    return x, pg, used


def weighted_objective(problem: ConvexProblem, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and x-gradient of the problem's own objective (no penalties).

    Goal terms contribute their exact (unsmoothed) hinge value and a
    subgradient.
    """
    d = problem.dinf.dose(x)
    dose_grad = np.zeros_like(d)
    total = 0.0
    for w, spec in problem.terms:
        if w == 0:
            continue
        idx = problem.structures[spec.structure].voxel_indices
        ds = d[idx]
        total += w * evaluate_on_structure(spec, ds)
        dose_grad[idx] += w * gradient_on_structure(spec, ds)
    for g in problem.goal_terms:
        idx = problem.structures[g.objective.structure].voxel_indices
        ds = d[idx]
        t = evaluate_on_structure(g.objective, ds) - g.goal
        if t > 0:
            total += g.weight * t
            dose_grad[idx] += g.weight * gradient_on_structure(g.objective, ds)
    return total, problem.dinf.matrix.T @ dose_grad


def _hinge_moreau(t: float, mu: float) -> tuple[float, float, float]:
    """Moreau envelope of max(0, t): value, first and second derivative."""
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    if t < mu:
        return t * t / (2.0 * mu), t / mu, 1.0 / mu
    return t - mu / 2.0, 1.0, 0.0


def solve_convex(problem: ConvexProblem, opts: SolverOptions | None = None) -> SolveResult:
    """Solve the convex fluence problem to the contracted tolerances.

    Raises :class:`InfeasibleError` when the feasibility phase cannot
    bring the worst constraint violation below ``opts.feas_tol``.
    Exhausting the iteration budget returns ``converged=False`` with the
    best iterate, never an error.
    """
    opts = opts or SolverOptions()
    problem.validate()
    matrix = problem.dinf.matrix
    n = problem.dinf.n_beamlets_total
    proj = _make_projector(problem.fixed_zero)

    x = problem.x0.copy() if problem.x0 is not None else np.zeros(n)
    if x.shape != (n,):
        raise McoplanError(f"x0 has shape {x.shape}, expected ({n},)")
    x = proj(x.astype(float))

    blocks: list[_Block] = [_DoseBlock(c, problem.structures) for c in problem.constraints]
    blocks += [_CapBlock(c, problem.structures) for c in problem.objective_caps]
    lambdas = [np.zeros(b.n_scalars) for b in blocks]
    if problem.cap_dual_hints is not None:
        hints = np.asarray(problem.cap_dual_hints, dtype=float)
        if hints.shape != (len(problem.objective_caps),) or np.any(hints < 0):
            raise McoplanError("cap dual hints must be nonnegative, one per cap")
        for hi, lam in zip(hints, lambdas[len(problem.constraints):]):
            lam[0] = hi
    rhos = [opts.penalty_init] * len(blocks)

    term_data = [(w, spec, problem.structures[spec.structure].voxel_indices)
                 for w, spec in problem.terms if w > 0]
    goal_data = [(g, problem.structures[g.objective.structure].voxel_indices)
                 for g in problem.goal_terms if g.weight > 0]
    goal_scales = [max(1.0, abs(g.goal)) for g, _ in goal_data]

    sigma_sq = _power_iteration_norm_sq(matrix)
    matrix_sq = matrix.copy()
    matrix_sq.data = matrix_sq.data**2  # for Jacobi diagonals: diag(D^T W D)
    budget = opts.max_iters
    used_total = 0

    tik = opts.tikhonov

    def make_fg(mu_goals: float, with_objective: bool):
        def fg(xv: np.ndarray, need_grad: bool = True):
            d = matrix @ xv
            dose_grad = np.zeros_like(d) if need_grad else None
            total = 0.5 * tik * float(xv @ xv) if with_objective else 0.0
            if with_objective:
                for w, spec, idx in term_data:
                    ds = d[idx]
                    total += w * evaluate_on_structure(spec, ds)
                    if need_grad:
                        dose_grad[idx] += w * gradient_on_structure(spec, ds)
                for (g, idx), scale in zip(goal_data, goal_scales):
                    ds = d[idx]
                    t = evaluate_on_structure(g.objective, ds) - g.goal
                    val, deriv, _ = _hinge_moreau(t, mu_goals * scale)
                    total += g.weight * val
                    if need_grad and deriv != 0.0:
                        dose_grad[idx] += (g.weight * deriv) * gradient_on_structure(
                            g.objective, ds)
            for bi, block in enumerate(blocks):
                res = block.residuals(d)
                if with_objective:
                    # Rockafellar augmented Lagrangian for g <= 0:
                    #   (max(0, lam + rho g)^2 - lam^2) / (2 rho)
                    shifted = np.maximum(lambdas[bi] + rhos[bi] * res, 0.0)
                    total += float(shifted @ shifted - lambdas[bi] @ lambdas[bi]) / (2.0 * rhos[bi])
                    coefs = shifted
                else:
                    pos = np.maximum(res, 0.0)
                    total += float(pos @ pos)
                    coefs = 2.0 * pos
                if need_grad and np.any(coefs != 0.0):
                    block.add_gradient(d, coefs, dose_grad)
            if need_grad:
                grad = matrix.T @ dose_grad
                if with_objective and tik:
                    grad += tik * xv
                return total, grad
            return total, None

        return fg

    def make_hv(mu_goals: float, with_objective: bool):
        def at(x_ref: np.ndarray):
            d_ref = matrix @ x_ref
            goal_states = []
            if with_objective:
                for (g, idx), scale in zip(goal_data, goal_scales):
                    ds = d_ref[idx]
                    t = evaluate_on_structure(g.objective, ds) - g.goal
                    _, deriv, second = _hinge_moreau(t, mu_goals * scale)
                    grad = (gradient_on_structure(g.objective, ds)
                            if (deriv or second) else None)
                    goal_states.append((g, idx, ds, deriv, second, grad))
            if with_objective:
                block_states = [b.hessvec_state(d_ref, lambdas[bi], rhos[bi])
                                for bi, b in enumerate(blocks)]
            else:
                # feasibility phase: sum pos(res)^2 has the same Hessian
                # pattern as an AL with lam=0, rho=2
                block_states = [b.hessvec_state(d_ref, np.zeros(b.n_scalars), 2.0)
                                for b in blocks]

            def hv(v: np.ndarray) -> np.ndarray:
                u = matrix @ v
                res = np.zeros_like(u)
                if with_objective:
                    for w, spec, idx in term_data:
                        res[idx] += w * hessian_vec_on_structure(spec, d_ref[idx], u[idx])
                    for g, idx, ds, deriv, second, grad in goal_states:
                        if grad is None:
                            continue
                        us = u[idx]
                        if second:
                            res[idx] += (g.weight * second) * (grad @ us) * grad
                        if deriv:
                            res[idx] += (g.weight * deriv) * hessian_vec_on_structure(
                                g.objective, ds, us)
                for block, state in zip(blocks, block_states):
                    block.add_hessvec(state, u, res)
                out = matrix.T @ res
                if with_objective and tik:
                    out += tik * v
                return out

            return hv

        return at

    def make_diag(mu_goals: float, with_objective: bool):
        """Jacobi preconditioner: x-space diagonal from the dose-space
        Hessian diagonal (rank-one cross terms ignored)."""

        def at(x_ref: np.ndarray) -> np.ndarray:
            d_ref = matrix @ x_ref
            w = np.zeros(matrix.shape[0])
            if with_objective:
                for wt, spec, idx in term_data:
                    w[idx] += wt * hessian_diag_on_structure(spec, d_ref[idx])
                for (g, idx), scale in zip(goal_data, goal_scales):
                    ds = d_ref[idx]
                    t = evaluate_on_structure(g.objective, ds) - g.goal
                    _, deriv, second = _hinge_moreau(t, mu_goals * scale)
                    if second:
                        grad = gradient_on_structure(g.objective, ds)
                        w[idx] += (g.weight * second) * grad * grad
                    if deriv:
                        w[idx] += (g.weight * deriv) * hessian_diag_on_structure(
                            g.objective, ds)
                for bi, block in enumerate(blocks):
                    block.add_hessdiag(block.hessvec_state(d_ref, lambdas[bi], rhos[bi]), w)
            else:
                for block in blocks:
                    block.add_hessdiag(
                        block.hessvec_state(d_ref, np.zeros(block.n_scalars), 2.0), w)
            out = np.maximum(matrix_sq.T @ w, 0.0)
            if with_objective and tik:
                out += tik
            return out

        return at

    def violations_of(xv: np.ndarray) -> dict[str, float]:
        d = matrix @ xv
        return {b.label: float(max(0.0, b.residuals(d).max())) for b in blocks}

    # ------------------------------------------------------------------
    # exterior feasibility phase (doubles as the infeasibility detector)
    if blocks:
        per0 = violations_of(x)
        if max(per0.values()) > opts.feas_tol:
            fg_feas = make_fg(0.0, with_objective=False)
            _, g0 = fg_feas(x)
            pg0 = float(np.linalg.norm(x - proj(x - g0), np.inf))
            x, _, used = _minimize_smooth(
                fg_feas, make_hv(0.0, False), make_diag(0.0, False), x, proj,
                sigma_sq, max(1e-10 * pg0, opts.stat_tol_abs),
                max(200, budget // 2), problem.fixed_zero)
            used_total += used
            per = violations_of(x)
            worst_label = max(per, key=lambda k: per[k])
            if per[worst_label] > opts.feas_tol:
                raise InfeasibleError(
                    f"constraint set infeasible: worst violation "
                    f"{per[worst_label]:.4g} on {worst_label!r} "
                    f"(tolerance {opts.feas_tol})",
                    worst_constraint=worst_label,
                    violations={k: v for k, v in per.items() if v > opts.feas_tol},
                )

    # ------------------------------------------------------------------
    # main phase: augmented-Lagrangian rounds (one plain round when
    # unconstrained); goal hinges get a smoothing continuation inside
    mu_schedule = [1e-1, 1e-3, opts.goal_mu_final] if goal_data else [0.0]
    pg_final = np.inf
    converged = False

    fg_probe = make_fg(mu_schedule[0], with_objective=True)
    _, g0 = fg_probe(x)
    pg_init = float(np.linalg.norm(x - proj(x - g0), np.inf))
    pg_target = max(opts.stat_tol_rel * pg_init, opts.stat_tol_abs)

    # contract tolerance is feas_tol; internally we keep tightening the
    # multipliers toward feas_aim so cap-constrained optima are sharp
    feas_aim = opts.feas_tol * opts.feas_target_factor
    prev_viols: list[float] | None = None
    rounds = opts.max_al_rounds if blocks else 1
    for rnd in range(rounds):
        inner_tol = max(pg_target, pg_init * 10.0 ** (-(2 + rnd))) if blocks else pg_target
        for mu in mu_schedule:
            if used_total >= budget:
                break
            x, pg_final, used = _minimize_smooth(
                make_fg(mu, True), make_hv(mu, True), make_diag(mu, True),
                x, proj, sigma_sq, inner_tol, budget - used_total,
                problem.fixed_zero)
            used_total += used
        if not blocks:
            converged = pg_final <= pg_target
            break
        d = matrix @ x
        viols = []
        for bi, block in enumerate(blocks):
            res = block.residuals(d)
            viols.append(float(max(0.0, res.max())))
            lambdas[bi] = np.maximum(0.0, lambdas[bi] + rhos[bi] * res)
        worst = max(viols)
        tight_enough = pg_final <= pg_target and inner_tol <= pg_target
        if worst <= feas_aim and tight_enough:
            converged = True
            break
        if (worst <= opts.feas_tol and tight_enough and prev_viols is not None
                and rnd >= 3 and worst > 0.5 * max(prev_viols)):
            converged = True  # violation stalled at its numerical floor
            break
        if prev_viols is not None:
            for bi in range(len(blocks)):
                if viols[bi] > feas_aim and viols[bi] > 0.25 * prev_viols[bi]:
                    rhos[bi] *= opts.penalty_growth
        prev_viols = viols
        if used_total >= budget:
            break

    obj_value, _ = weighted_objective(problem, x)
    per = violations_of(x)
    n_hard = len(problem.constraints)
    cap_duals = (np.array([lam[0] for lam in lambdas[n_hard:]])
                 if problem.objective_caps else None)
    return SolveResult(
        x=x,
        d=matrix @ x,
        objective_value=obj_value,
        stationarity=pg_final,
        constraint_violation_gy=max(per.values()) if per else 0.0,
        iterations=used_total,
        converged=converged,
        cap_duals=cap_duals,
    )
