"""HTTP service for case management and live Pareto navigation.

All engine state is immutable once built; sessions are the only mutable
objects and each one is guarded by a non-blocking lock, so concurrent
mutations of one session yield 409 instead of interleaving. Surface
builds run on background threads with polled progress. Dose math stays
server-side: the UI gets a max-pooled dose field and precomputed DVHs.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import CaseStoreError, McoplanError, NavigationError
from .mco import ParetoDatabase
from .metrics import check_constraints, dvh
from .navigator import NavigationSession, open_session
from .sparsifier import SparsifyMode, SparsifySpec, sparsify
from .store import Case, CaseStatus, CaseStore


class SurfaceRequest(BaseModel):
    budget: int = Field(ge=2)
    gap: float = Field(default=0.01, ge=0.0)


class SessionRequest(BaseModel):
    case_id: str


class DragRequest(BaseModel):
    objective_index: int = Field(ge=0)
    requested_value: float


class LockRequest(BaseModel):
    objective_index: int = Field(ge=0)
    bound: float


class UnlockRequest(BaseModel):
    objective_index: int = Field(ge=0)


class RestrictRequest(BaseModel):
    m: int = Field(ge=1)


class SparsifyRequest(BaseModel):
    beams: int = Field(ge=1)
    epsilon: float = Field(ge=0.0)
    mode: str = "contribution_score"


class _SessionEntry:
    def __init__(self, session_id: str, case: Case, db: ParetoDatabase,
                 session: NavigationSession):
        self.session_id = session_id
        self.case = case
        self.db = db
        self.session = session
        self.lock = threading.Lock()


def downsample_max(field: np.ndarray, max_size: int = 128) -> np.ndarray:
    """Max-pool a 2D field down to at most max_size per axis."""
    ny, nx = field.shape
    fy = -(-ny // max_size)
    fx = -(-nx // max_size)
    if fy == 1 and fx == 1:
        return field
    pad_y = fy * -(-ny // fy) - ny
    pad_x = fx * -(-nx // fx) - nx
    padded = np.pad(field, ((0, pad_y), (0, pad_x)), constant_values=-np.inf)
    h, w = padded.shape
    pooled = padded.reshape(h // fy, fy, w // fx, fx).max(axis=(1, 3))
    return np.where(np.isfinite(pooled), pooled, 0.0)


def create_app(store: CaseStore, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="mcoplan", version="0.1.0")
    sessions: dict[str, _SessionEntry] = {}
    builds: dict[str, threading.Thread] = {}
    counter = {"session": 0}
    registry_lock = threading.Lock()
    app.state.sessions = sessions
    app.state.builds = builds

    def get_entry(session_id: str) -> _SessionEntry:
        entry = sessions.get(session_id)
        if entry is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return entry

    def session_state(entry: _SessionEntry) -> dict:
        s = entry.session
        case = entry.case
        interp = s.interpolated_fvals()
        exact = s.exact_fvals()
        mins = s.objective_minima()
        maxs = s.objective_maxima()
        d = s.combined_dose()
        grid = case.spec.grid
        field = d.reshape(grid.ny, grid.nx)
        pooled = downsample_max(field)
        curves = [dvh(st, d, n_samples=48) for st in case.structures.values()]
        report = check_constraints(case.constraints, d, case.structures, tol_gy=0.01)
        return {
            "session_id": entry.session_id,
            "case_id": case.case_id,
            "n_plans": s.db.n_plans,
            "alpha": s.alpha.tolist(),
            "active_plans": s.restricted,
            "objectives": [
                {
                    "id": o.id,
                    "structure": o.structure,
                    "kind": o.kind.value,
                    "unit": o.unit,
                    "min": float(mins[j]),
                    "max": float(maxs[j]),
                    "current": float(exact[j]),
                    "interpolated": float(interp[j]),
                    "locked": bool(s.locked[j]),
                    "bound": float(s.upper_bounds[j]),
                }
                for j, o in enumerate(s.db.objectives)
            ],
            "dvh": [
                {
                    "structure": c.structure,
                    "dose_gy": [float(v) for v in c.dose_axis_gy],
                    "volume_fraction": [float(v) for v in c.volume_fraction],
                }
                for c in curves
            ],
            "dose": {
                "ny": pooled.shape[0],
                "nx": pooled.shape[1],
                "voxel_size_mm": grid.voxel_size_mm,
                "max_gy": float(d.max()),
                "values": [float(v) for v in pooled.ravel()],
            },
            "feasible": report.feasible,
            "constraints": {k: float(v) for k, v in report.violations_gy.items()},
        }

    def mutate(session_id: str, fn) -> dict:
        entry = get_entry(session_id)
        if not entry.lock.acquire(blocking=False):
            raise HTTPException(409, "session is busy with another mutation")
        try:
            fn(entry)
            return session_state(entry)
        except NavigationError as e:
            raise HTTPException(422, detail={
                "message": str(e),
                "blocking_locks": [
                    {"objective_index": j, "bound": b, "achievable_min": m}
                    for j, b, m in e.blocking_locks
                ],
            }) from e
        except McoplanError as e:
            raise HTTPException(400, str(e)) from e
        finally:
            entry.lock.release()

    # -- cases ---------------------------------------------------------------

    @app.get("/v1/cases")
    def list_cases():
        return {"cases": [store.record(cid).to_dict() for cid in store.list_cases()]}

    @app.post("/v1/cases")
    def create_case(doc: dict):
        try:
            case_id = store.create_case(doc)
        except McoplanError as e:
            raise HTTPException(422, str(e)) from e
        return {"case_id": case_id, "record": store.record(case_id).to_dict()}

    @app.get("/v1/cases/{case_id}")
    def get_case(case_id: str):
        try:
            return store.record(case_id).to_dict()
        except CaseStoreError as e:
            raise HTTPException(404, str(e)) from e

    @app.post("/v1/cases/{case_id}/surface", status_code=202)
    def start_surface(case_id: str, req: SurfaceRequest):
        try:
            record = store.record(case_id)
        except CaseStoreError as e:
            raise HTTPException(404, str(e)) from e
        with registry_lock:
            thread = builds.get(case_id)
            if thread is not None and thread.is_alive():
                raise HTTPException(409, "surface build already running")
            if record.status is CaseStatus.SURFACE_READY:
                return {"status": record.status.value, "note": "surface already built"}

            def run():
                try:
                    store.build_surface(case_id, req.budget, req.gap)
                except Exception:
                    pass  # recorded as FAILED in the case record

            thread = threading.Thread(target=run, daemon=True)
            builds[case_id] = thread
            thread.start()
        return {"status": CaseStatus.SURFACE_BUILDING.value}

    @app.get("/v1/cases/{case_id}/surface/status")
    def surface_status(case_id: str):
        try:
            record = store.record(case_id)
        except CaseStoreError as e:
            raise HTTPException(404, str(e)) from e
        return {
            "status": record.status.value,
            "progress": record.progress,
            "gap_history": record.gap_history,
            "error": record.error,
        }

    # -- sessions -------------------------------------------------------------

    @app.post("/v1/sessions")
    def create_session(req: SessionRequest):
        try:
            record = store.record(req.case_id)
        except CaseStoreError as e:
            raise HTTPException(404, str(e)) from e
        if record.status is not CaseStatus.SURFACE_READY:
            raise HTTPException(409, f"case {req.case_id!r} has no built surface "
                                     f"(status {record.status.value})")
        case = store.load_case(req.case_id)
        db = store.load_surface(req.case_id, case)
        with registry_lock:
            counter["session"] += 1
            session_id = f"sess-{counter['session']:04d}"
            entry = _SessionEntry(session_id, case, db, open_session(db, case.structures))
            sessions[session_id] = entry
        return session_state(entry)

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return session_state(get_entry(session_id))

    @app.post("/v1/sessions/{session_id}/drag")
    def drag(session_id: str, req: DragRequest):
        return mutate(session_id,
                      lambda e: e.session.drag_slider(req.objective_index, req.requested_value))

    @app.post("/v1/sessions/{session_id}/lock")
    def lock(session_id: str, req: LockRequest):
        return mutate(session_id,
                      lambda e: e.session.lock_bound(req.objective_index, req.bound))

    @app.post("/v1/sessions/{session_id}/unlock")
    def unlock(session_id: str, req: UnlockRequest):
        return mutate(session_id, lambda e: e.session.unlock(req.objective_index))

    @app.post("/v1/sessions/{session_id}/restrict")
    def restrict(session_id: str, req: RestrictRequest):
        out: dict = {}

        def run(e: _SessionEntry):
            report = e.session.restrict_active_plans(req.m)
            out["restrict"] = {
                "selected": report.selected,
                "fallback_added": report.fallback_added,
                "degradation": report.degradation.tolist(),
            }

        state = mutate(session_id, run)
        state.update(out)
        return state

    @app.post("/v1/sessions/{session_id}/export")
    def export(session_id: str):
        entry = get_entry(session_id)
        if not entry.lock.acquire(blocking=False):
            raise HTTPException(409, "session is busy with another mutation")
        try:
            plan = entry.session.export_plan()
            plan_id = store.save_plan(entry.case.case_id, plan,
                                      alpha=entry.session.alpha, label="navigated")
        finally:
            entry.lock.release()
        return {"plan_id": plan_id, "fvals": plan.fvals.tolist()}

    @app.post("/v1/sessions/{session_id}/sparsify")
    def sparsify_endpoint(session_id: str, req: SparsifyRequest):
        entry = get_entry(session_id)
        if not entry.lock.acquire(blocking=False):
            raise HTTPException(409, "session is busy with another mutation")
        try:
            try:
                mode = SparsifyMode(req.mode)
            except ValueError:
                raise HTTPException(422, f"unknown sparsify mode {req.mode!r}") from None
            case = entry.case
            reference = entry.session.export_plan()
            try:
                report = sparsify(
                    SparsifySpec(req.beams, req.epsilon, reference, mode),
                    case.dinf, case.objectives, case.constraints, case.structures,
                    case.solver_options,
                )
            except McoplanError as e:
                raise HTTPException(422, str(e)) from e
            plan_id = store.save_plan(case.case_id, report.final_plan, label="sparse")
        finally:
            entry.lock.release()
        return {
            "plan_id": plan_id,
            "achieved": report.achieved,
            "active_beam_count": report.active_beam_count,
            "removed_beams": report.removed_beams,
            "caps": report.caps.tolist(),
            "final_fvals": report.final_plan.fvals.tolist(),
            "steps": [
                {
                    "beam": s.beam,
                    "gantry_angle_deg": s.gantry_angle_deg,
                    "score": s.score,
                    "fvals": s.fvals.tolist(),
                    "resolved": s.resolved,
                }
                for s in report.steps
            ],
            "search_space_note": report.search_space_note,
            "note": report.note,
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
