import copy
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from mcoplan.api import create_app, downsample_max
from mcoplan.errors import CaseStoreError
from mcoplan.mco import evaluate_objectives
from mcoplan.store import CaseStatus, CaseStore


@pytest.fixture(scope="module")
def small_doc(demo_doc):
    """A cheaper variant of the bundled case for service tests."""
    doc = copy.deepcopy(demo_doc)
    doc["solver"]["max_iters"] = 2500
    return doc


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    return CaseStore(tmp_path_factory.mktemp("cases"))


@pytest.fixture(scope="module")
def client(store):
    return TestClient(create_app(store))


@pytest.fixture(scope="module")
def ready_case(client, small_doc):
    case_id = client.post("/v1/cases", json=small_doc).json()["case_id"]
    r = client.post(f"/v1/cases/{case_id}/surface", json={"budget": 5, "gap": 0.05})
    assert r.status_code == 202
    deadline = time.time() + 300
    while time.time() < deadline:
        status = client.get(f"/v1/cases/{case_id}/surface/status").json()
        if status["status"] in ("surface_ready", "failed"):
            break
        time.sleep(0.3)
    assert status["status"] == "surface_ready", status
    return case_id


class TestStore:
    def test_create_and_reload(self, store, small_doc):
        case_id = store.create_case(small_doc, case_id="roundtrip")
        case = store.load_case(case_id)
        assert case.dinf.n_beams == 36
        assert [o.id for o in case.objectives] == ["tumor_dev", "cord_sq", "lung_sq"]
        record = store.record(case_id)
        assert record.status is CaseStatus.MATRIX_BUILT
        assert record.n_beamlets == case.dinf.n_beamlets_total

    def test_unknown_case(self, store):
        with pytest.raises(CaseStoreError):
            store.load_case("missing")

    def test_status_cannot_move_backward(self, store, small_doc):
        case_id = store.create_case(small_doc, case_id="transitions")
        store.update_record(case_id, status=CaseStatus.SURFACE_BUILDING)
        with pytest.raises(CaseStoreError):
            store.update_record(case_id, status=CaseStatus.CREATED)
        # failure is reachable from anywhere
        store.update_record(case_id, status=CaseStatus.FAILED, error="boom")
        assert store.record(case_id).error == "boom"

    def test_plan_persistence_roundtrip(self, store, small_doc):
        case_id = store.create_case(small_doc, case_id="plans")
        case = store.load_case(case_id)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 3, case.dinf.n_beamlets_total)
        d = case.dinf.dose(x)
        from mcoplan.mco import Plan, Provenance

        fvals = evaluate_objectives(case.objectives, d, case.structures)
        plan_id = store.save_plan(case_id, Plan(x=x, d=d, fvals=fvals,
                                                provenance=Provenance.NAVIGATED))
        again = store.load_plan(case_id, plan_id, case)
        assert np.array_equal(again.x, x)
        assert np.allclose(again.fvals, fvals, rtol=0, atol=1e-12)


class TestDownsample:
    def test_passthrough_when_small(self):
        f = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(downsample_max(f, 128), f)

    def test_max_pooling(self):
        f = np.arange(16.0).reshape(4, 4)
        pooled = downsample_max(f, 2)
        assert pooled.shape == (2, 2)
        assert pooled[0, 0] == 5.0 and pooled[1, 1] == 15.0

    def test_ragged_padding(self):
        f = np.arange(15.0).reshape(3, 5)
        pooled = downsample_max(f, 2)
        assert max(pooled.shape) <= 2
        assert pooled.max() == 14.0


class TestCaseEndpoints:
    def test_unknown_ids_404(self, client):
        assert client.get("/v1/cases/nope").status_code == 404
        assert client.get("/v1/cases/nope/surface/status").status_code == 404
        assert client.post("/v1/sessions", json={"case_id": "nope"}).status_code == 404
        assert client.get("/v1/sessions/nope").status_code == 404
        assert client.post("/v1/sessions/nope/drag",
                           json={"objective_index": 0, "requested_value": 1.0}).status_code == 404

    def test_invalid_case_document_422(self, client, small_doc):
        bad = copy.deepcopy(small_doc)
        bad["objectives"] = []
        assert client.post("/v1/cases", json=bad).status_code == 422

    def test_session_requires_built_surface(self, client, store, small_doc):
        case_id = store.create_case(small_doc, case_id="nosurface")
        r = client.post("/v1/sessions", json={"case_id": case_id})
        assert r.status_code == 409

    def test_surface_status_reports_history(self, client, ready_case):
        status = client.get(f"/v1/cases/{ready_case}/surface/status").json()
        assert status["progress"] == 1.0
        assert len(status["gap_history"]) >= 1


class TestSessionEndpoints:
    def test_drag_response_matches_direct_replay(self, client, store, ready_case):
        s = client.post("/v1/sessions", json={"case_id": ready_case}).json()
        sid = s["session_id"]
        target = s["objectives"][0]["min"] + 0.25 * (
            s["objectives"][0]["max"] - s["objectives"][0]["min"])
        out = client.post(f"/v1/sessions/{sid}/drag",
                          json={"objective_index": 0, "requested_value": target}).json()
        # replay alpha against the stored database: fvals must match exactly
        case = store.load_case(ready_case)
        db = store.load_surface(ready_case, case)
        alpha = np.array(out["alpha"])
        d = db.dose_matrix().T @ alpha
        fvals = evaluate_objectives(db.objectives, d, case.structures)
        got = np.array([o["current"] for o in out["objectives"]])
        assert np.allclose(got, fvals, rtol=0, atol=1e-12)
        interp = db.fvals_matrix().T @ alpha
        got_interp = np.array([o["interpolated"] for o in out["objectives"]])
        assert np.allclose(got_interp, interp, rtol=0, atol=1e-12)

    def test_concurrent_mutation_409(self, client, ready_case):
        s = client.post("/v1/sessions", json={"case_id": ready_case}).json()
        sid = s["session_id"]
        # deterministically simulate an in-flight mutation by holding the
        # session's lock, then issue a second one
        entry = client.app.state.sessions[sid]
        assert entry.lock.acquire(blocking=False)
        try:
            r = client.post(f"/v1/sessions/{sid}/drag",
                            json={"objective_index": 0, "requested_value": 0.0})
            assert r.status_code == 409
        finally:
            entry.lock.release()
        # once released, the same mutation succeeds
        r = client.post(f"/v1/sessions/{sid}/drag",
                        json={"objective_index": 0, "requested_value": 0.0})
        assert r.status_code == 200

    def test_infeasible_lock_422_with_details(self, client, ready_case):
        s = client.post("/v1/sessions", json={"case_id": ready_case}).json()
        sid = s["session_id"]
        r = client.post(f"/v1/sessions/{sid}/lock",
                        json={"objective_index": 0, "bound": -5.0})
        assert r.status_code == 422
        detail = r.json()["detail"]
        assert detail["blocking_locks"][0]["objective_index"] == 0
        # the session is unchanged: a follow-up drag still works
        assert client.post(f"/v1/sessions/{sid}/drag",
                           json={"objective_index": 0,
                                 "requested_value": 1e9}).status_code == 200

    def test_export_and_sparsify(self, client, store, ready_case):
        s = client.post("/v1/sessions", json={"case_id": ready_case}).json()
        sid = s["session_id"]
        out = client.post(f"/v1/sessions/{sid}/export")
        assert out.status_code == 200
        plan_id = out.json()["plan_id"]
        case = store.load_case(ready_case)
        plan = store.load_plan(ready_case, plan_id, case)
        assert np.allclose(plan.fvals, out.json()["fvals"], rtol=0, atol=1e-12)

        r = client.post(f"/v1/sessions/{sid}/sparsify",
                        json={"beams": 30, "epsilon": 0.5})
        assert r.status_code == 200
        body = r.json()
        assert body["active_beam_count"] <= 30
        assert "steps" in body and "search_space_note" in body

    def test_restrict_endpoint_reports(self, client, ready_case):
        s = client.post("/v1/sessions", json={"case_id": ready_case}).json()
        sid = s["session_id"]
        r = client.post(f"/v1/sessions/{sid}/restrict", json={"m": 2})
        assert r.status_code == 200
        body = r.json()
        assert len(body["restrict"]["selected"]) >= 2
        assert body["active_plans"] is not None

    def test_dose_and_dvh_payload_shape(self, client, ready_case, demo_doc):
        s = client.post("/v1/sessions", json={"case_id": ready_case}).json()
        dose = s["dose"]
        assert dose["nx"] == demo_doc["grid"]["nx"]
        assert dose["ny"] == demo_doc["grid"]["ny"]
        assert len(dose["values"]) == dose["nx"] * dose["ny"]
        assert dose["max_gy"] >= 0
        structures = {c["structure"] for c in s["dvh"]}
        assert {"tumor", "cord", "lung", "body"} <= structures
        for c in s["dvh"]:
            vf = c["volume_fraction"]
            assert vf[0] == 1.0
            assert all(a >= b for a, b in zip(vf, vf[1:]))
