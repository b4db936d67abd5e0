"""Beam-count reduction for a navigated plan.

Successively removes the beam contributing least to the solution and
re-solves the restricted convex problem with every objective capped at
its reference value times (1 + epsilon). Removal never backtracks; when
a re-solve can no longer honor the caps the loop stops and reports the
best attempt. Degradation numbers are always recomputed from the
re-solved dose, never carried forward.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .dinf import DoseInfluenceMatrix
from .errors import InfeasibleError, McoplanError
from .metrics import ConstraintSpec, ObjectiveSpec, check_constraints
from .mco import Plan, Provenance, evaluate_objectives
from .phantom import Structure, StructureKind, count_beam_sets
from .solver import ConvexProblem, ObjectiveCap, SolverOptions, solve_convex


class SparsifyMode(Enum):
    GREEDY_REMOVAL = "greedy_removal"  # score candidates by trial re-solves
    CONTRIBUTION_SCORE = "contribution_score"  # score by delivered target dose


@dataclass(frozen=True)
class SparsifySpec:
    target_beam_count: int
    epsilon: float  # per-objective relative degradation allowance
    reference: Plan
    mode: SparsifyMode = SparsifyMode.CONTRIBUTION_SCORE

    def __post_init__(self):
        if self.target_beam_count < 1:
            raise McoplanError("target beam count must be >= 1")
        if self.epsilon < 0:
            raise McoplanError("epsilon must be >= 0")


@dataclass(frozen=True)
class SparsifyStep:
    beam: int
    gantry_angle_deg: float
    score: float
    fvals: np.ndarray  # recomputed after this removal's re-solve
    resolved: bool  # False for the exact zero-intensity shortcut


@dataclass
class SparsifyReport:
    removed_beams: list[int]
    steps: list[SparsifyStep]
    final_plan: Plan
    achieved: bool
    caps: np.ndarray
    search_space_note: str
    active_beam_count: int
    note: str = ""


def _target_voxels(structures: Mapping[str, Structure]) -> np.ndarray:
    idx = [s.voxel_indices for s in structures.values() if s.kind is StructureKind.TARGET]
    if not idx:
        raise McoplanError("case has no target structure")
    return np.concatenate(idx)


def sparsify(spec: SparsifySpec, dinf: DoseInfluenceMatrix,
             objectives: Sequence[ObjectiveSpec], constraints: list[ConstraintSpec],
             structures: Mapping[str, Structure],
             opts: SolverOptions | None = None) -> SparsifyReport:
    """Reduce the plan to at most ``spec.target_beam_count`` active beams.

    Failing to reach the target count is a reported outcome
    (``achieved=False``), not an error.
    """
    opts = opts or SolverOptions()
    ref = spec.reference
    n_beams = dinf.n_beams
    if spec.target_beam_count > n_beams:
        raise McoplanError(
            f"target beam count {spec.target_beam_count} exceeds {n_beams} beams")
    if ref.x.shape != (dinf.n_beamlets_total,):
        raise McoplanError("reference plan does not match the dose-influence matrix")
    feas = check_constraints(constraints, ref.d, structures, tol_gy=opts.feas_tol)
    if not feas.feasible:
        cid, v = feas.worst
        raise McoplanError(f"reference plan violates constraint {cid!r} by {v:.3g} Gy")

    objectives = list(objectives)
    ref_fvals = evaluate_objectives(objectives, ref.d, structures)
    caps = ref_fvals * (1.0 + spec.epsilon)
    scales = np.maximum(np.abs(ref_fvals), 1e-6)
    cap_list = [ObjectiveCap(o, float(c)) for o, c in zip(objectives, caps)]
    terms = [(float(1.0 / s), o) for s, o in zip(scales, objectives)]
    target_idx = _target_voxels(structures)

    trial_opts = replace(opts, max_iters=min(600, opts.max_iters), max_al_rounds=8)

    x = ref.x.copy()
    active = list(range(n_beams))
    removed: list[int] = []
    steps: list[SparsifyStep] = []
    fvals = ref_fvals.copy()
    achieved = True
    note = ""

    def beam_cols(b: int) -> slice:
        return dinf.columns_of_beam(b)

    def removal_mask(extra: int | None = None) -> np.ndarray:
        mask = np.zeros(dinf.n_beamlets_total, dtype=bool)
        for b in removed:
            mask[beam_cols(b)] = True
        if extra is not None:
            mask[beam_cols(extra)] = True
        return mask

    dual_carry: np.ndarray | None = None

    def restricted_solve(extra: int, warm: np.ndarray, solver_opts: SolverOptions):
        mask = removal_mask(extra)
        x0 = warm.copy()
        x0[mask] = 0.0
        problem = ConvexProblem(
            dinf=dinf, structures=structures, terms=list(terms),
            objective_caps=list(cap_list), constraints=list(constraints),
            x0=x0, fixed_zero=mask, cap_dual_hints=dual_carry,
        )
        return solve_convex(problem, solver_opts)

    while len(active) > spec.target_beam_count:
        # score the candidates; lowest contribution goes first
        scores: dict[int, float] = {}
        if spec.mode is SparsifyMode.CONTRIBUTION_SCORE:
            for b in active:
                cols = beam_cols(b)
                dose_b = dinf.matrix[:, cols] @ x[cols]
                scores[b] = float(dose_b[target_idx].sum())
        else:
            current_score = float((fvals / scales).sum())
            for b in active:
                if not np.any(x[beam_cols(b)]):
                    scores[b] = 0.0
                    continue
                try:
                    trial = restricted_solve(b, x, trial_opts)
                except InfeasibleError:
                    scores[b] = float("inf")
                    continue
                if trial.constraint_violation_gy > opts.feas_tol:
                    scores[b] = float("inf")
                    continue
                tvals = evaluate_objectives(objectives, trial.d, structures)
                scores[b] = float((tvals / scales).sum()) - current_score

        # a candidate whose removal cannot hold the caps is skipped; the
        # round fails only when every remaining beam is stuck
        order = sorted(active, key=lambda b: (scores[b], dinf.beam_angles[b]))
        removed_this_round = False
        for victim in order:
            if not np.isfinite(scores[victim]):
                break
            cols = beam_cols(victim)
            if not np.any(x[cols]):
                # removing an all-zero beam cannot change the dose
                removed.append(victim)
                active.remove(victim)
                steps.append(SparsifyStep(victim, float(dinf.beam_angles[victim]),
                                          scores[victim], fvals.copy(), resolved=False))
                removed_this_round = True
                break
            try:
                result = restricted_solve(victim, x, opts)
            except InfeasibleError:
                continue
            if result.constraint_violation_gy > opts.feas_tol:
                continue
            removed.append(victim)
            active.remove(victim)
            x = result.x
            dual_carry = result.cap_duals
            fvals = evaluate_objectives(objectives, result.d, structures)
            steps.append(SparsifyStep(victim, float(dinf.beam_angles[victim]),
                                      scores[victim], fvals.copy(), resolved=True))
            removed_this_round = True
            break
        if not removed_this_round:
            achieved = False
            note = (f"no removable beam left at {len(active)} beams: every "
                    f"candidate re-solve violates the degradation caps")
            break

    d = dinf.dose(x)
    final_fvals = evaluate_objectives(objectives, d, structures)
    achieved = achieved and len(active) <= spec.target_beam_count and bool(
        np.all(final_fvals <= caps + opts.feas_tol))
    plan = Plan(x=x, d=d, fvals=final_fvals, provenance=Provenance.SPARSIFIED)
    space = count_beam_sets(n_beams, spec.target_beam_count)
    return SparsifyReport(
        removed_beams=removed,
        steps=steps,
        final_plan=plan,
        achieved=achieved,
        caps=caps,
        search_space_note=(
            f"exact search over C({n_beams},{spec.target_beam_count}) = {space} "
            f"beam sets is out of scope; greedy removal used"),
        active_beam_count=len(active),
        note=note,
    )


def active_beams(dinf: DoseInfluenceMatrix, x: np.ndarray, tol: float = 0.0) -> list[int]:
    """Beams with any intensity above tol."""
    return [b for b in range(dinf.n_beams)
            if np.any(x[dinf.columns_of_beam(b)] > tol)]
