"""Dose-summary objectives, gradients, hard constraints, and DVH reporting.

All objective kinds are convex in dose and normalized per voxel (means,
not sums) so weights stay comparable across structures of different
sizes. Maximum dose appears in two forms: a smooth log-sum-exp objective
for weighted-sum solves and an exact per-voxel bound as a hard
constraint. Dose-volume levels are reporting metrics only, never
optimization constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import MetricsError
from .phantom import Structure


class ObjectiveKind(Enum):
    MEAN_DOSE = "mean_dose"
    MAX_DOSE_SOFT = "max_dose_soft"
    QUADRATIC_DEVIATION = "quadratic_deviation"
    QUADRATIC_OVERDOSE = "quadratic_overdose"
    QUADRATIC_UNDERDOSE = "quadratic_underdose"


_NEEDS_REFERENCE = {
    ObjectiveKind.QUADRATIC_DEVIATION,
    ObjectiveKind.QUADRATIC_OVERDOSE,
    ObjectiveKind.QUADRATIC_UNDERDOSE,
}


class ConstraintKind(Enum):
    MAX_DOSE = "max_dose"
    MEAN_DOSE = "mean_dose"
    MIN_DOSE = "min_dose"


@dataclass(frozen=True)
class ObjectiveSpec:
    """One convex dose objective on one structure (sense: minimize)."""

    id: str
    structure: str
    kind: ObjectiveKind
    reference_gy: float | None = None
    sharpness_per_gy: float = 10.0  # log-sum-exp sharpness for MAX_DOSE_SOFT

    def __post_init__(self):
        if self.kind in _NEEDS_REFERENCE:
            if self.reference_gy is None or self.reference_gy < 0:
                raise MetricsError(f"objective {self.id!r} ({self.kind.value}) needs reference_gy >= 0")
        if self.kind is ObjectiveKind.MAX_DOSE_SOFT and self.sharpness_per_gy <= 0:
            raise MetricsError(f"objective {self.id!r} needs positive sharpness")

    @property
    def unit(self) -> str:
        return "Gy" if self.kind in (ObjectiveKind.MEAN_DOSE, ObjectiveKind.MAX_DOSE_SOFT) else "Gy^2"


@dataclass(frozen=True)
class ConstraintSpec:
    """One non-negotiable linear dose bound on one structure."""

    id: str
    structure: str
    kind: ConstraintKind
    bound_gy: float

    def __post_init__(self):
        if self.bound_gy < 0:
            raise MetricsError(f"constraint {self.id!r} needs bound_gy >= 0")


@dataclass(frozen=True)
class DvhCurve:
    """Cumulative dose-volume histogram of one structure."""

    structure: str
    dose_axis_gy: np.ndarray
    volume_fraction: np.ndarray


@dataclass(frozen=True)
class ConstraintReport:
    violations_gy: dict[str, float]  # constraint id -> worst violation in Gy
    feasible: bool

    @property
    def worst(self) -> tuple[str, float]:
        cid = max(self.violations_gy, key=lambda k: self.violations_gy[k])
        return cid, self.violations_gy[cid]


def _structure_indices(structures: Mapping[str, Structure], name: str) -> np.ndarray:
    try:
        return structures[name].voxel_indices
    except KeyError:
        raise MetricsError(f"unknown structure {name!r}") from None


def evaluate(objective: ObjectiveSpec, d: np.ndarray,
             structures: Mapping[str, Structure]) -> float:
    """Objective value at dose vector d."""
    return evaluate_on_structure(
        objective, d[_structure_indices(structures, objective.structure)]
    )


def evaluate_on_structure(objective: ObjectiveSpec, ds: np.ndarray) -> float:
    """Objective value given the structure's own dose values."""
    kind = objective.kind
    if kind is ObjectiveKind.MEAN_DOSE:
        return float(ds.mean())
    if kind is ObjectiveKind.MAX_DOSE_SOFT:
        beta = objective.sharpness_per_gy
        c = ds.max()
        return float(c + np.log(np.mean(np.exp(beta * (ds - c)))) / beta)
    r = objective.reference_gy
    if kind is ObjectiveKind.QUADRATIC_DEVIATION:
        return float(np.mean((ds - r) ** 2))
    if kind is ObjectiveKind.QUADRATIC_OVERDOSE:
        return float(np.mean(np.maximum(ds - r, 0.0) ** 2))
    if kind is ObjectiveKind.QUADRATIC_UNDERDOSE:
        return float(np.mean(np.maximum(r - ds, 0.0) ** 2))
    raise MetricsError(f"unhandled objective kind {kind}")


def gradient(objective: ObjectiveSpec, d: np.ndarray,
             structures: Mapping[str, Structure]) -> np.ndarray:
    """Exact gradient of ``evaluate`` w.r.t. dose; zero outside the structure."""
    idx = _structure_indices(structures, objective.structure)
    g = np.zeros_like(d)
    g[idx] = gradient_on_structure(objective, d[idx])
    return g


def gradient_on_structure(objective: ObjectiveSpec, ds: np.ndarray) -> np.ndarray:
    """Gradient restricted to the structure's own voxels."""
    m = ds.size
    kind = objective.kind
    if kind is ObjectiveKind.MEAN_DOSE:
        return np.full(m, 1.0 / m)
    if kind is ObjectiveKind.MAX_DOSE_SOFT:
        beta = objective.sharpness_per_gy
        e = np.exp(beta * (ds - ds.max()))
        return e / e.sum()
    r = objective.reference_gy
    if kind is ObjectiveKind.QUADRATIC_DEVIATION:
        return 2.0 * (ds - r) / m
    if kind is ObjectiveKind.QUADRATIC_OVERDOSE:
        return 2.0 * np.maximum(ds - r, 0.0) / m
    if kind is ObjectiveKind.QUADRATIC_UNDERDOSE:
        return -2.0 * np.maximum(r - ds, 0.0) / m
    raise MetricsError(f"unhandled objective kind {kind}")


def hessian_vec_on_structure(objective: ObjectiveSpec, ds: np.ndarray,
                             vs: np.ndarray) -> np.ndarray:
    """Dose-space Hessian-vector product restricted to the structure.

    Piecewise-quadratic kinds use the active pattern at ``ds`` (semismooth
    Newton convention).
    """
    m = ds.size
    kind = objective.kind
    if kind is ObjectiveKind.MEAN_DOSE:
        return np.zeros(m)
    if kind is ObjectiveKind.MAX_DOSE_SOFT:
        beta = objective.sharpness_per_gy
        e = np.exp(beta * (ds - ds.max()))
        p = e / e.sum()
        return beta * (p * vs - p * (p @ vs))
    r = objective.reference_gy
    if kind is ObjectiveKind.QUADRATIC_DEVIATION:
        return 2.0 * vs / m
    if kind is ObjectiveKind.QUADRATIC_OVERDOSE:
        return 2.0 * np.where(ds > r, vs, 0.0) / m
    if kind is ObjectiveKind.QUADRATIC_UNDERDOSE:
        return 2.0 * np.where(ds < r, vs, 0.0) / m
    raise MetricsError(f"unhandled objective kind {kind}")


def hessian_diag_on_structure(objective: ObjectiveSpec, ds: np.ndarray) -> np.ndarray:
    """Diagonal of the dose-space Hessian on the structure (for Jacobi
    preconditioning); same active-pattern convention as the hessvec."""
    m = ds.size
    kind = objective.kind
    if kind is ObjectiveKind.MEAN_DOSE:
        return np.zeros(m)
    if kind is ObjectiveKind.MAX_DOSE_SOFT:
        beta = objective.sharpness_per_gy
        e = np.exp(beta * (ds - ds.max()))
        p = e / e.sum()
        return beta * (p - p * p)
    r = objective.reference_gy
    if kind is ObjectiveKind.QUADRATIC_DEVIATION:
        return np.full(m, 2.0 / m)
    if kind is ObjectiveKind.QUADRATIC_OVERDOSE:
        return np.where(ds > r, 2.0 / m, 0.0)
    if kind is ObjectiveKind.QUADRATIC_UNDERDOSE:
        return np.where(ds < r, 2.0 / m, 0.0)
    raise MetricsError(f"unhandled objective kind {kind}")


def curvature_bound(objective: ObjectiveSpec, structure_size: int) -> float:
    """Upper bound on the Hessian spectral norm of the structure-restricted
    objective, used for solver step sizing."""
    if objective.kind is ObjectiveKind.MEAN_DOSE:
        return 0.0
    if objective.kind is ObjectiveKind.MAX_DOSE_SOFT:
        return objective.sharpness_per_gy
    return 2.0 / structure_size


def dvh(structure: Structure, d: np.ndarray, n_samples: int = 64) -> DvhCurve:
    """Cumulative DVH sampled uniformly from 0 to the max structure dose."""
    if n_samples < 2:
        raise MetricsError("DVH needs at least 2 samples")
    ds = d[structure.voxel_indices]
    if ds.size == 0:
        raise MetricsError(f"empty structure {structure.name!r}")
    axis = np.linspace(0.0, float(ds.max()), n_samples)
    frac = (ds[None, :] >= axis[:, None]).mean(axis=1)
    return DvhCurve(structure.name, axis, frac)


def volume_at_or_above(structure: Structure, d: np.ndarray, level_gy: float) -> float:
    """Fraction of structure volume receiving at least ``level_gy``."""
    ds = d[structure.voxel_indices]
    return float((ds >= level_gy).mean())


def check_constraints(constraints: list[ConstraintSpec], d: np.ndarray,
                      structures: Mapping[str, Structure],
                      tol_gy: float = 0.0) -> ConstraintReport:
    """Per-constraint worst violation in Gy; feasible iff all within tol."""
    if tol_gy < 0:
        raise MetricsError("tolerance must be nonnegative")
    violations: dict[str, float] = {}
    for c in constraints:
        ds = d[_structure_indices(structures, c.structure)]
        if c.kind is ConstraintKind.MAX_DOSE:
            v = float(ds.max() - c.bound_gy)
        elif c.kind is ConstraintKind.MEAN_DOSE:
            v = float(ds.mean() - c.bound_gy)
        else:  # MIN_DOSE
            v = float(c.bound_gy - ds.min())
        violations[c.id] = max(0.0, v)
    feasible = all(v <= tol_gy for v in violations.values())
    return ConstraintReport(violations, feasible)


def dvh_rows(curves: list[DvhCurve]) -> list[tuple[str, float, float]]:
    """Flatten DVH curves to (structure, dose_gy, volume_fraction) CSV rows."""
    rows = []
    for c in curves:
        for dose, frac in zip(c.dose_axis_gy, c.volume_fraction):
            rows.append((c.structure, float(dose), float(frac)))
    return rows


def objective_from_dict(doc: dict) -> ObjectiveSpec:
    try:
        kind = ObjectiveKind(doc["kind"])
    except ValueError:
        raise MetricsError(f"unknown objective kind {doc.get('kind')!r}") from None
    except KeyError:
        raise MetricsError("objective missing 'kind'") from None
    return ObjectiveSpec(
        id=str(doc["id"]),
        structure=str(doc["structure"]),
        kind=kind,
        reference_gy=(float(doc["reference_gy"]) if doc.get("reference_gy") is not None else None),
        sharpness_per_gy=float(doc.get("sharpness_per_gy", 10.0)),
    )


def constraint_from_dict(doc: dict) -> ConstraintSpec:
    try:
        kind = ConstraintKind(doc["kind"])
    except ValueError:
        raise MetricsError(f"unknown constraint kind {doc.get('kind')!r}") from None
    except KeyError:
        raise MetricsError("constraint missing 'kind'") from None
    return ConstraintSpec(
        id=str(doc["id"]),
        structure=str(doc["structure"]),
        kind=kind,
        bound_gy=float(doc["bound_gy"]),
    )


def objective_to_dict(o: ObjectiveSpec) -> dict:
    return {
        "id": o.id, "structure": o.structure, "kind": o.kind.value,
        "reference_gy": o.reference_gy, "sharpness_per_gy": o.sharpness_per_gy,
    }


def constraint_to_dict(c: ConstraintSpec) -> dict:
    return {"id": c.id, "structure": c.structure, "kind": c.kind.value, "bound_gy": c.bound_gy}
