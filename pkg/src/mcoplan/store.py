"""File-backed case persistence and pipeline orchestration.

A case lives in one directory: the case document, the dose-influence
matrix, the Pareto surface, and any exported plans. No database server;
everything a run produces is plain files with versioned formats.

    <root>/<case-id>/
        case.json      the case document (phantom, objectives, ...)
        record.json    status record
        dinf.bin       dose-influence matrix (binary CSC)
        pareto/        surface: manifest.json + plan_XXX.bin
        plans/         exported plans: <plan-id>.json + <plan-id>.bin
        reports/       sparsification reports
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .dinf import DoseInfluenceMatrix, compute_dose_influence
from .errors import CaseStoreError
from .mco import (
    ParetoDatabase,
    Plan,
    Provenance,
    build_pareto_surface,
    evaluate_objectives,
    load_database,
    save_database,
    load_intensities,
    save_intensities,
)
from .metrics import (
    ConstraintSpec,
    ObjectiveSpec,
    constraint_from_dict,
    objective_from_dict,
)
from .phantom import PhantomSpec, Structure, build_phantom, phantom_spec_from_dict
from .solver import SolverOptions


class CaseStatus(Enum):
    CREATED = "created"
    MATRIX_BUILT = "matrix_built"
    SURFACE_BUILDING = "surface_building"
    SURFACE_READY = "surface_ready"
    FAILED = "failed"


_STATUS_ORDER = {
    CaseStatus.CREATED: 0,
    CaseStatus.MATRIX_BUILT: 1,
    CaseStatus.SURFACE_BUILDING: 2,
    CaseStatus.SURFACE_READY: 3,
}


@dataclass
class CaseRecord:
    case_id: str
    status: CaseStatus
    progress: float = 0.0  # surface-build progress in [0, 1]
    gap_history: list[float] = field(default_factory=list)
    error: str | None = None
    n_voxels: int = 0
    n_beamlets: int = 0
    n_beams: int = 0

    def to_dict(self) -> dict:
        return {
            "format": "mcoplan-record@1",
            "case_id": self.case_id,
            "status": self.status.value,
            "progress": self.progress,
            "gap_history": self.gap_history,
            "error": self.error,
            "n_voxels": self.n_voxels,
            "n_beamlets": self.n_beamlets,
            "n_beams": self.n_beams,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseRecord":
        return cls(
            case_id=d["case_id"],
            status=CaseStatus(d["status"]),
            progress=float(d.get("progress", 0.0)),
            gap_history=list(d.get("gap_history", [])),
            error=d.get("error"),
            n_voxels=int(d.get("n_voxels", 0)),
            n_beamlets=int(d.get("n_beamlets", 0)),
            n_beams=int(d.get("n_beams", 0)),
        )


@dataclass
class Case:
    """One fully assembled planning case."""

    case_id: str
    doc: dict
    spec: PhantomSpec
    structures: Mapping[str, Structure]
    dinf: DoseInfluenceMatrix
    objectives: list[ObjectiveSpec]
    constraints: list[ConstraintSpec]
    solver_options: SolverOptions


def solver_options_from_dict(d: dict | None) -> SolverOptions:
    d = d or {}
    defaults = SolverOptions()
    return SolverOptions(
        max_iters=int(d.get("max_iters", defaults.max_iters)),
        stat_tol_rel=float(d.get("stat_tol_rel", defaults.stat_tol_rel)),
        feas_tol=float(d.get("feas_tol", defaults.feas_tol)),
        penalty_init=float(d.get("penalty_init", defaults.penalty_init)),
        max_al_rounds=int(d.get("max_al_rounds", defaults.max_al_rounds)),
        tikhonov=float(d.get("tikhonov", defaults.tikhonov)),
    )


def parse_case_document(doc: dict) -> tuple[PhantomSpec, list[ObjectiveSpec], list[ConstraintSpec], SolverOptions]:
    spec = phantom_spec_from_dict(doc)
    objectives = [objective_from_dict(o) for o in doc.get("objectives", [])]
    constraints = [constraint_from_dict(c) for c in doc.get("constraints", [])]
    if not objectives:
        raise CaseStoreError("case document declares no objectives")
    names = {s.name for s in spec.structures} | {"unclassified"}
    for o in objectives:
        if o.structure not in names:
            raise CaseStoreError(f"objective {o.id!r} references unknown structure {o.structure!r}")
    for c in constraints:
        if c.structure not in names:
            raise CaseStoreError(f"constraint {c.id!r} references unknown structure {c.structure!r}")
    return spec, objectives, constraints, solver_options_from_dict(doc.get("solver"))


class CaseStore:
    """Directory-per-case persistence under one root."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- case lifecycle -----------------------------------------------------

    def list_cases(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir()
                      if p.is_dir() and (p / "case.json").exists())

    def case_dir(self, case_id: str) -> Path:
        d = self.root / case_id
        if not (d / "case.json").exists():
            raise CaseStoreError(f"unknown case {case_id!r}")
        return d

    def _next_case_id(self) -> str:
        existing = self.list_cases()
        n = 1
        while f"case-{n:04d}" in existing:
            n += 1
        return f"case-{n:04d}"

    def create_case(self, doc: dict, case_id: str | None = None) -> str:
        """Validate the document, build the dose-influence matrix, and
        persist everything; returns the new case id."""
        spec, objectives, constraints, opts = parse_case_document(doc)
        grid, structures = build_phantom(spec)
        dinf = compute_dose_influence(grid, spec.beams, spec.model)
        case_id = case_id or self._next_case_id()
        d = self.root / case_id
        if d.exists():
            raise CaseStoreError(f"case {case_id!r} already exists")
        d.mkdir(parents=True)
        (d / "plans").mkdir()
        (d / "reports").mkdir()
        with open(d / "case.json", "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1)
        dinf.save(d / "dinf.bin")
        record = CaseRecord(
            case_id=case_id,
            status=CaseStatus.MATRIX_BUILT,
            n_voxels=dinf.n_voxels,
            n_beamlets=dinf.n_beamlets_total,
            n_beams=dinf.n_beams,
        )
        self._write_record(d, record)
        return case_id

    def load_case(self, case_id: str) -> Case:
        d = self.case_dir(case_id)
        with open(d / "case.json", encoding="utf-8") as f:
            doc = json.load(f)
        spec, objectives, constraints, opts = parse_case_document(doc)
        _, structures = build_phantom(spec)
        dinf = DoseInfluenceMatrix.load(d / "dinf.bin")
        return Case(
            case_id=case_id, doc=doc, spec=spec,
            structures={s.name: s for s in structures},
            dinf=dinf, objectives=objectives, constraints=constraints,
            solver_options=opts,
        )

    # -- records --------------------------------------------------------------

    def record(self, case_id: str) -> CaseRecord:
        d = self.case_dir(case_id)
        with open(d / "record.json", encoding="utf-8") as f:
            return CaseRecord.from_dict(json.load(f))

    def _write_record(self, case_dir: Path, record: CaseRecord) -> None:
        tmp = case_dir / "record.json.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(record.to_dict(), f, indent=1)
        tmp.replace(case_dir / "record.json")

    def update_record(self, case_id: str, status: CaseStatus | None = None,
                      progress: float | None = None,
                      gap_history: list[float] | None = None,
                      error: str | None = None) -> CaseRecord:
        d = self.case_dir(case_id)
        record = self.record(case_id)
        if status is not None and status is not record.status:
            if status is not CaseStatus.FAILED and record.status is not CaseStatus.FAILED:
                if _STATUS_ORDER[status] < _STATUS_ORDER[record.status]:
                    raise CaseStoreError(
                        f"status cannot move backward: {record.status.value} -> {status.value}")
            record.status = status
        if progress is not None:
            record.progress = progress
        if gap_history is not None:
            record.gap_history = gap_history
        if error is not None:
            record.error = error
        self._write_record(d, record)
        return record

    # -- surface --------------------------------------------------------------

    def surface_dir(self, case_id: str) -> Path:
        return self.case_dir(case_id) / "pareto"

    def build_surface(self, case_id: str, budget: int, target_gap: float) -> ParetoDatabase:
        """Run the sandwich build and persist; records progress and the
        gap history in the case record."""
        case = self.load_case(case_id)
        self.update_record(case_id, status=CaseStatus.SURFACE_BUILDING, progress=0.0)
        gaps: list[float] = []

        def on_progress(n_plans: int, gap: float) -> None:
            gaps.append(gap)
            self.update_record(case_id, progress=min(n_plans / max(budget, 1), 1.0),
                               gap_history=gaps)

        try:
            db = build_pareto_surface(
                case.objectives, case.constraints, case.dinf, case.structures,
                budget=budget, target_gap=target_gap, opts=case.solver_options,
                progress=on_progress,
            )
            save_database(db, self.surface_dir(case_id))
        except Exception as e:
            self.update_record(case_id, status=CaseStatus.FAILED, error=str(e))
            raise
        self.update_record(case_id, status=CaseStatus.SURFACE_READY, progress=1.0,
                           gap_history=db.gap_history)
        return db

    def load_surface(self, case_id: str, case: Case | None = None) -> ParetoDatabase:
        case = case or self.load_case(case_id)
        return load_database(self.surface_dir(case_id), case.dinf, case.structures)

    # -- plans ------------------------------------------------------------------

    def save_plan(self, case_id: str, plan: Plan, alpha: np.ndarray | None = None,
                  label: str = "plan") -> str:
        d = self.case_dir(case_id) / "plans"
        n = 1
        while (d / f"{label}-{n:04d}.json").exists():
            n += 1
        plan_id = f"{label}-{n:04d}"
        save_intensities(d / f"{plan_id}.bin", plan.x)
        meta = {
            "format": "mcoplan-plan@1",
            "case_id": case_id,
            "plan_id": plan_id,
            "provenance": plan.provenance.value,
            "fvals": plan.fvals.tolist(),
            "alpha": None if alpha is None else np.asarray(alpha).tolist(),
            "x_file": f"{plan_id}.bin",
        }
        with open(d / f"{plan_id}.json", "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=1)
        return plan_id

    def load_plan(self, case_id: str, plan_ref: str | Path, case: Case | None = None) -> Plan:
        """Load a plan by id or by path to its JSON descriptor; dose and
        objective values are recomputed from the stored intensities."""
        case = case or self.load_case(case_id)
        path = Path(plan_ref)
        if not path.suffix:
            path = self.case_dir(case_id) / "plans" / f"{plan_ref}.json"
        if not path.exists():
            raise CaseStoreError(f"plan {plan_ref!r} not found")
        with open(path, encoding="utf-8") as f:
            meta = json.load(f)
        if meta.get("format") != "mcoplan-plan@1":
            raise CaseStoreError(f"unsupported plan format {meta.get('format')!r}")
        x = load_intensities(path.parent / meta["x_file"])
        d = case.dinf.dose(x)
        fvals = evaluate_objectives(case.objectives, d, case.structures)
        return Plan(x=x, d=d, fvals=fvals, provenance=Provenance(meta["provenance"]))
