"""Multi-criteria planning modes over one case.

Three ways to handle conflicting objectives:

* goal programming: minimize the total slack by which stated goals are
  missed; zero total slack means every goal was met;
* prioritized (lexicographic) optimization: optimize objectives in
  priority order, capping each earlier objective at its achieved optimum
  plus a slip factor;
* Pareto surface generation: anchor solves per objective followed by
  sandwich refinement -- repeatedly solve a weighted-sum problem along
  the inner-hull facet normal with the largest inner/outer gap, until a
  plan budget or target gap is reached.

The surface is stored with its supporting hyperplanes so the
approximation error (the sandwich gap) is measurable, not assumed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .dinf import DoseInfluenceMatrix
from .errors import InfeasibleError, McoplanError
from .lp import LinearProgram, LpStatus, solve_lp
from .metrics import (
    ConstraintSpec,
    ObjectiveSpec,
    evaluate_on_structure,
    objective_from_dict,
    objective_to_dict,
)
from .phantom import Structure
from .solver import (
    ConvexProblem,
    GoalTerm,
    ObjectiveCap,
    SolveResult,
    SolverOptions,
    solve_convex,
)

_PLAN_MAGIC = b"PLNB"
_PLAN_VERSION = 1
_DB_FORMAT = "mcoplan-pareto@1"


class Provenance(Enum):
    ANCHOR = "anchor"
    WEIGHTED_SUM = "weighted_sum"
    EPSILON_CONSTRAINT = "epsilon_constraint"
    NAVIGATED = "navigated"
    SPARSIFIED = "sparsified"
    GOAL_PROGRAM = "goal_program"
    PRIORITIZED = "prioritized"


@dataclass(frozen=True)
class Plan:
    """One treatment plan: intensities, dose, and objective vector."""

    x: np.ndarray
    d: np.ndarray
    fvals: np.ndarray
    provenance: Provenance


@dataclass(frozen=True)
class GoalSpec:
    objective: ObjectiveSpec
    goal_value: float
    weight: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.goal_value):
            raise McoplanError(f"goal for {self.objective.id!r} must be finite")
        if self.weight <= 0:
            raise McoplanError(f"goal weight for {self.objective.id!r} must be positive")


class SlipMode(Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True)
class PriorityLevel:
    objective: ObjectiveSpec
    slip: float = 0.03
    slip_mode: SlipMode = SlipMode.RELATIVE

    def __post_init__(self):
        if self.slip < 0:
            raise McoplanError(f"slip for {self.objective.id!r} must be >= 0")

    def cap_for(self, optimum: float) -> float:
        if self.slip_mode is SlipMode.ABSOLUTE:
            return optimum + self.slip
        return optimum + self.slip * abs(optimum)


@dataclass(frozen=True)
class PrioritySpec:
    levels: tuple[PriorityLevel, ...]

    def __post_init__(self):
        if not self.levels:
            raise McoplanError("priority spec needs at least one level")


@dataclass(frozen=True)
class StageRecord:
    objective_id: str
    optimum: float
    cap: float  # bound handed to later stages
    iterations: int
    converged: bool


@dataclass
class ParetoDatabase:
    """Pareto surface approximation: plans plus sandwich bookkeeping."""

    objectives: list[ObjectiveSpec]
    plans: list[Plan] = field(default_factory=list)
    generator_weights: list[np.ndarray] = field(default_factory=list)
    hyperplanes: list[tuple[np.ndarray, float]] = field(default_factory=list)
    gap_history: list[float] = field(default_factory=list)
    gap_estimate: float = float("inf")
    anchor_lower: np.ndarray | None = None  # per-objective anchor minima
    anchor_upper: np.ndarray | None = None  # per-objective maxima over anchors

    @property
    def n_objectives(self) -> int:
        return len(self.objectives)

    @property
    def n_plans(self) -> int:
        return len(self.plans)

    def fvals_matrix(self) -> np.ndarray:
        return np.array([p.fvals for p in self.plans])

    def dose_matrix(self) -> np.ndarray:
        return np.array([p.d for p in self.plans])


def evaluate_objectives(objectives: Sequence[ObjectiveSpec], d: np.ndarray,
                        structures: Mapping[str, Structure]) -> np.ndarray:
    return np.array([
        evaluate_on_structure(o, d[structures[o.structure].voxel_indices])
        for o in objectives
    ])


def _plan_from_result(result: SolveResult, objectives: Sequence[ObjectiveSpec],
                      structures: Mapping[str, Structure],
                      provenance: Provenance) -> Plan:
    fvals = evaluate_objectives(objectives, result.d, structures)
    return Plan(x=result.x, d=result.d, fvals=fvals, provenance=provenance)


# ---------------------------------------------------------------------------
# goal programming and prioritized optimization


def goal_program(goals: Sequence[GoalSpec], constraints: list[ConstraintSpec],
                 dinf: DoseInfluenceMatrix, structures: Mapping[str, Structure],
                 opts: SolverOptions | None = None) -> tuple[Plan, np.ndarray]:
    """Minimize total weighted slack over the stated goals.

    Returns the plan and the per-goal slacks max(0, f_j - g_j),
    recomputed exactly at the returned dose.
    """
    if not goals:
        raise McoplanError("goal programming needs at least one goal")
    problem = ConvexProblem(
        dinf=dinf, structures=structures,
        goal_terms=[GoalTerm(g.objective, g.goal_value, g.weight) for g in goals],
        constraints=constraints,
    )
    result = solve_convex(problem, opts)
    objectives = [g.objective for g in goals]
    plan = _plan_from_result(result, objectives, structures, Provenance.GOAL_PROGRAM)
    slacks = np.maximum(0.0, plan.fvals - np.array([g.goal_value for g in goals]))
    return plan, slacks


def prioritized_optimize(priorities: PrioritySpec, constraints: list[ConstraintSpec],
                         dinf: DoseInfluenceMatrix, structures: Mapping[str, Structure],
                         opts: SolverOptions | None = None) -> tuple[Plan, list[StageRecord]]:
    """Sequential lexicographic solves with slip-relaxed caps.

    Stage k minimizes objective k subject to the hard constraints plus
    f_i <= cap_i for every earlier stage i. Raises InfeasibleError naming
    the stage if a stage cannot satisfy its caps (which cannot happen
    when caps come from prior optima with nonnegative slip).
    """
    stage_log: list[StageRecord] = []
    caps: list[ObjectiveCap] = []
    dual_carry: list[float] = []
    x_warm: np.ndarray | None = None
    result: SolveResult | None = None
    for k, level in enumerate(priorities.levels):
        problem = ConvexProblem(
            dinf=dinf, structures=structures,
            terms=[(1.0, level.objective)],
            objective_caps=list(caps),
            constraints=constraints,
            x0=x_warm,
            cap_dual_hints=np.array(dual_carry) if caps else None,
        )
        try:
            result = solve_convex(problem, opts)
        except InfeasibleError as e:
            raise InfeasibleError(
                f"priority stage {k + 1} ({level.objective.id!r}) infeasible: {e}",
                worst_constraint=e.worst_constraint, violations=e.violations,
            ) from e
        cap = level.cap_for(result.objective_value)
        stage_log.append(StageRecord(
            objective_id=level.objective.id,
            optimum=result.objective_value,
            cap=cap,
            iterations=result.iterations,
            converged=result.converged,
        ))
        caps.append(ObjectiveCap(level.objective, cap))
        # carry converged multipliers; the new cap opens slack, so 0 for it
        dual_carry = (list(result.cap_duals) if result.cap_duals is not None else []) + [0.0]
        x_warm = result.x
    objectives = [lvl.objective for lvl in priorities.levels]
    plan = _plan_from_result(result, objectives, structures, Provenance.PRIORITIZED)
    return plan, stage_log


# ---------------------------------------------------------------------------
# Pareto point generation


def weighted_sum_point(weights: Sequence[float], objectives: Sequence[ObjectiveSpec],
                       constraints: list[ConstraintSpec], dinf: DoseInfluenceMatrix,
                       structures: Mapping[str, Structure],
                       opts: SolverOptions | None = None,
                       x0: np.ndarray | None = None,
                       provenance: Provenance = Provenance.WEIGHTED_SUM,
                       ) -> tuple[Plan, tuple[np.ndarray, float]]:
    """Solve min sum_i w_i f_i; returns the plan and its supporting
    hyperplane (w, w . f*) for outer-approximation bookkeeping."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(objectives),) or np.any(w < 0) or not np.any(w > 0):
        raise McoplanError("weights must be a nonnegative, not-all-zero vector per objective")
    problem = ConvexProblem(
        dinf=dinf, structures=structures,
        terms=[(float(wi), o) for wi, o in zip(w, objectives)],
        constraints=constraints, x0=x0,
    )
    result = solve_convex(problem, opts)
    plan = _plan_from_result(result, objectives, structures, provenance)
    return plan, (w.copy(), float(w @ plan.fvals))


def epsilon_constraint_point(minimize_index: int, caps: Sequence[float],
                             objectives: Sequence[ObjectiveSpec],
                             constraints: list[ConstraintSpec],
                             dinf: DoseInfluenceMatrix,
                             structures: Mapping[str, Structure],
                             opts: SolverOptions | None = None,
                             x0: np.ndarray | None = None,
                             dual_hints: Sequence[float] | None = None) -> Plan:
    """Minimize objective ``minimize_index`` holding every other
    objective below its cap (+inf caps are skipped).

    ``dual_hints`` optionally warm-starts the cap multipliers (e.g.
    w_j / w_k when cross-checking a weighted-sum point); it only
    accelerates the solve, the usual convergence checks still apply.
    """
    n = len(objectives)
    if not 0 <= minimize_index < n:
        raise McoplanError(f"minimize_index {minimize_index} out of range")
    caps = np.asarray(caps, dtype=float)
    if caps.shape != (n,):
        raise McoplanError(f"caps must have length {n}")
    keep = [j for j in range(n) if j != minimize_index and np.isfinite(caps[j])]
    cap_list = [ObjectiveCap(objectives[j], float(caps[j])) for j in keep]
    hints = None
    if dual_hints is not None:
        hints_full = np.asarray(dual_hints, dtype=float)
        if hints_full.shape != (n,):
            raise McoplanError(f"dual hints must have length {n}")
        hints = hints_full[keep]
    problem = ConvexProblem(
        dinf=dinf, structures=structures,
        terms=[(1.0, objectives[minimize_index])],
        objective_caps=cap_list,
        constraints=constraints, x0=x0,
        cap_dual_hints=hints,
    )
    result = solve_convex(problem, opts)
    return _plan_from_result(result, objectives, structures, Provenance.EPSILON_CONSTRAINT)


def dominance_filter(points: Sequence[Sequence[float]] | np.ndarray) -> list[int]:
    """Indices of the nondominated points (minimization).

    A point is dropped when another point is at least as good in every
    coordinate and strictly better in one, or when it duplicates an
    earlier point exactly.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise McoplanError("dominance filter expects a 2D array of objective vectors")
    kept: list[int] = []
    for i in range(pts.shape[0]):
        p = pts[i]
        le = np.all(pts <= p, axis=1)
        lt = np.any(pts < p, axis=1)
        if np.any(le & lt):
            continue
        equal = np.all(pts[:i] == p, axis=1) if i else np.array([], dtype=bool)
        if np.any(equal):
            continue
        kept.append(i)
    return kept


# ---------------------------------------------------------------------------
# sandwich surface construction


@dataclass(frozen=True)
class _Facet:
    weights_norm: np.ndarray  # unit-L2 direction in normalized space, >= 0
    support_inner: float  # min over facet vertices of w . v
    perturbed: bool  # true when a mixed-sign normal was clamped


def _front_facets(points_norm: np.ndarray, margin: float = 0.25) -> list[_Facet]:
    """Pareto-facing facets of the inner hull in normalized space.

    The point cloud is closed with a dominated cap point so the hull is
    full-dimensional; facets containing the cap are discarded. Outward
    normals of front facets point away from the feasible side; mixed-sign
    normals (degenerate facets) are clamped to nonnegative directions and
    flagged.
    """
    n_pts, n_dim = points_norm.shape
    cap = points_norm.max(axis=0) + margin
    cloud = np.vstack([points_norm, cap])
    try:
        hull = ConvexHull(cloud)
    except QhullError:
        return []
    facets: list[_Facet] = []
    cap_idx = n_pts
    for simplex, eq in zip(hull.simplices, hull.equations):
        if cap_idx in simplex:
            continue
        normal = -eq[:n_dim]  # flip outward normal toward the minimization cone
        if normal.max() <= 1e-12:
            continue
        perturbed = bool(normal.min() < -1e-12)
        w = np.maximum(normal, 0.0)
        norm = np.linalg.norm(w)
        if norm <= 1e-12:
            continue
        w = w / norm
        support = float(min(w @ cloud[v] for v in simplex))
        facets.append(_Facet(w, support, perturbed))
    return facets


def _outer_support(direction: np.ndarray, hyperplanes_norm: list[tuple[np.ndarray, float]],
                   lo: np.ndarray, hi: np.ndarray) -> float:
    """min direction . y over the outer polytope (supporting halfspaces
    intersected with the bounding box)."""
    n = len(direction)
    a_ub = np.array([-w for w, _ in hyperplanes_norm])
    b_ub = np.array([-z for _, z in hyperplanes_norm])
    result = solve_lp(LinearProgram(
        costs=direction, a_ub=a_ub, b_ub=b_ub, lower=lo, upper=hi,
    ))
    if result.status is not LpStatus.OPTIMAL:
        # hyperplanes from valid solves always admit the stored points
        raise McoplanError(f"outer-support LP unexpectedly {result.status.value}")
    return float(result.value)


def build_pareto_surface(objectives: Sequence[ObjectiveSpec],
                         constraints: list[ConstraintSpec],
                         dinf: DoseInfluenceMatrix,
                         structures: Mapping[str, Structure],
                         budget: int,
                         target_gap: float = 0.01,
                         opts: SolverOptions | None = None,
                         progress: "callable | None" = None) -> ParetoDatabase:
    """Sandwich approximation of the Pareto surface.

    Computes one anchor plan per objective, then repeatedly refines the
    inner-hull facet with the largest normal-direction distance to the
    outer approximation, solving a weighted-sum problem along the facet
    normal. Stops at ``budget`` plans or when the relative gap (distance
    over the anchor-box diagonal) drops below ``target_gap``.
    """
    objectives = list(objectives)
    n_obj = len(objectives)
    if n_obj < 2:
        raise McoplanError("Pareto surface needs at least 2 objectives")
    if n_obj > 12:
        raise McoplanError("objective count limited to 12")
    if budget < n_obj:
        raise McoplanError(f"budget {budget} below the {n_obj} anchor solves")

    db = ParetoDatabase(objectives=objectives)
    opts = opts or SolverOptions()

    # anchors in two passes: rough single-objective solves give the scale
    # of each objective, then the production anchors re-solve with a small
    # range-normalized augmentation (still Pareto optimal, but the solve is
    # well conditioned instead of flat along every unseen beamlet)
    rough_opts = SolverOptions(max_iters=min(1500, opts.max_iters),
                               stat_tol_rel=1e-4, feas_tol=opts.feas_tol,
                               tikhonov=opts.tikhonov)
    rough: list[Plan] = []
    for i in range(n_obj):
        w = np.full(n_obj, 1e-9)
        w[i] = 1.0
        plan, _ = weighted_sum_point(w, objectives, constraints, dinf, structures,
                                     rough_opts, provenance=Provenance.ANCHOR)
        rough.append(plan)
    rough_f = np.array([p.fvals for p in rough])
    spread = rough_f.max(axis=0) - rough_f.min(axis=0)
    spread = np.where(spread > 1e-12, spread, 1.0)

    eta = 1e-3
    for i in range(n_obj):
        w_hat = np.full(n_obj, eta)
        w_hat[i] = 1.0
        w = w_hat / spread
        w = w / w.sum()
        plan, hp = weighted_sum_point(w, objectives, constraints, dinf, structures,
                                      opts, x0=rough[i].x, provenance=Provenance.ANCHOR)
        db.plans.append(plan)
        db.generator_weights.append(hp[0])
        db.hyperplanes.append(hp)

    fmat = db.fvals_matrix()
    lb = fmat.min(axis=0)
    ub = fmat.max(axis=0)
    ranges = np.where(ub - lb > 1e-12, ub - lb, 1.0)
    db.anchor_lower = lb
    db.anchor_upper = ub
    diag = float(np.sqrt(n_obj))

    degenerate = bool(np.all(ub - lb <= 1e-12))

    def normalize_points(fm: np.ndarray) -> np.ndarray:
        return (fm - lb) / ranges

    def normalize_plane(w_raw: np.ndarray, z_raw: float) -> tuple[np.ndarray, float]:
        w_n = w_raw * ranges
        z_n = z_raw - float(w_raw @ lb)
        scale = np.linalg.norm(w_n)
        if scale <= 0:
            return w_n, z_n
        return w_n / scale, z_n / scale

    def current_gap() -> tuple[float, list[_Facet]]:
        pts = normalize_points(db.fvals_matrix())
        facets = _front_facets(pts)
        if not facets:
            return 0.0, []
        planes_n = [normalize_plane(w, z) for w, z in db.hyperplanes]
        lo = pts.min(axis=0) - 0.25
        hi = pts.max(axis=0) + 0.25
        gaps = [f.support_inner - _outer_support(f.weights_norm, planes_n, lo, hi)
                for f in facets]
        worst = max(gaps)
        order = int(np.argmax(gaps))  # ties resolve to the lowest index
        return worst / diag, facets[order:order + 1] + facets[:order] + facets[order + 1:]

    def prune_dominated() -> None:
        kept = dominance_filter(db.fvals_matrix())
        if len(kept) != len(db.plans):
            db.plans = [db.plans[i] for i in kept]
            db.generator_weights = [db.generator_weights[i] for i in kept]

    prune_dominated()
    if degenerate:
        db.gap_estimate = 0.0
        db.gap_history.append(0.0)
        return db

    stall = 0
    gap_rel, ordered = current_gap()
    db.gap_history.append(gap_rel)
    if progress is not None:
        progress(db.n_plans, gap_rel)
    while db.n_plans < budget and gap_rel > target_gap and stall < 3 and ordered:
        facet = ordered[0]
        w_raw = facet.weights_norm / ranges
        w_raw = w_raw / w_raw.sum()
        # warm start from the stored plan that is best along this direction
        scores = db.fvals_matrix() @ w_raw
        x0 = db.plans[int(np.argmin(scores))].x
        plan, hp = weighted_sum_point(w_raw, objectives, constraints, dinf, structures,
                                      opts, x0=x0)
        db.hyperplanes.append(hp)
        is_new = not any(np.allclose(plan.fvals, p.fvals, rtol=0, atol=1e-9)
                         for p in db.plans)
        if is_new:
            db.plans.append(plan)
            db.generator_weights.append(hp[0])
            prune_dominated()
        new_gap, ordered = current_gap()
        if not is_new and new_gap >= gap_rel - 1e-12:
            stall += 1
        else:
            stall = 0
        gap_rel = new_gap
        db.gap_history.append(gap_rel)
        if progress is not None:
            progress(db.n_plans, gap_rel)

    db.gap_estimate = gap_rel
    return db


# ---------------------------------------------------------------------------
# database persistence (directory with manifest + one binary per plan)


def save_intensities(path: Path, x: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(_PLAN_MAGIC)
        f.write(struct.pack("<IQ", _PLAN_VERSION, len(x)))
        np.asarray(x, dtype="<f8").tofile(f)


def load_intensities(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _PLAN_MAGIC:
            raise McoplanError(f"not a plan file: bad magic {magic!r}")
        version, n = struct.unpack("<IQ", f.read(12))
        if version != _PLAN_VERSION:
            raise McoplanError(f"unsupported plan format version {version}")
        return np.fromfile(f, dtype="<f8", count=n)


def save_database(db: ParetoDatabase, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": _DB_FORMAT,
        "objectives": [objective_to_dict(o) for o in db.objectives],
        "gap_history": db.gap_history,
        "gap_estimate": db.gap_estimate,
        "anchor_lower": None if db.anchor_lower is None else db.anchor_lower.tolist(),
        "anchor_upper": None if db.anchor_upper is None else db.anchor_upper.tolist(),
        "hyperplanes": [{"weights": w.tolist(), "value": z} for w, z in db.hyperplanes],
        "plans": [],
    }
    for i, plan in enumerate(db.plans):
        fname = f"plan_{i:03d}.bin"
        save_intensities(directory / fname, plan.x)
        manifest["plans"].append({
            "file": fname,
            "provenance": plan.provenance.value,
            "weights": db.generator_weights[i].tolist(),
            "fvals": plan.fvals.tolist(),
        })
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)


def load_database(directory: str | Path, dinf: DoseInfluenceMatrix,
                  structures: Mapping[str, Structure],
                  verify_tol: float = 1e-12) -> ParetoDatabase:
    """Reload a surface directory; recomputes and verifies every plan's
    objective vector against the manifest."""
    directory = Path(directory)
    try:
        with open(directory / "manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise McoplanError(f"no surface manifest in {directory}") from None
    if manifest.get("format") != _DB_FORMAT:
        raise McoplanError(f"unsupported surface format {manifest.get('format')!r}")
    objectives = [objective_from_dict(o) for o in manifest["objectives"]]
    db = ParetoDatabase(
        objectives=objectives,
        gap_history=list(manifest["gap_history"]),
        gap_estimate=float(manifest["gap_estimate"]),
        anchor_lower=(None if manifest["anchor_lower"] is None
                      else np.array(manifest["anchor_lower"])),
        anchor_upper=(None if manifest["anchor_upper"] is None
                      else np.array(manifest["anchor_upper"])),
        hyperplanes=[(np.array(h["weights"]), float(h["value"]))
                     for h in manifest["hyperplanes"]],
    )
    for entry in manifest["plans"]:
        x = load_intensities(directory / entry["file"])
        d = dinf.dose(x)
        fvals = evaluate_objectives(objectives, d, structures)
        stored = np.array(entry["fvals"])
        scale = np.maximum(1.0, np.abs(stored))
        if np.any(np.abs(fvals - stored) > verify_tol * scale):
            raise McoplanError(
                f"plan {entry['file']} objective vector drifted beyond {verify_tol}"
            )
        db.plans.append(Plan(x=x, d=d, fvals=fvals,
                             provenance=Provenance(entry["provenance"])))
        db.generator_weights.append(np.array(entry["weights"]))
    return db
