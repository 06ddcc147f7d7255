"""Event-sourced store replay and HTTP service flow tests."""

from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from cadclarify.agents import CadProgram, TemplateRegistry
from cadclarify.errors import IllegalTransition
from cadclarify.execution import CachingExecutor, ExecutorClient, MeshCache
from cadclarify.gateway import Endpoint, Gateway, ScriptedBackend, ScriptedReply
from cadclarify.geometry import ChamferResult, TriMesh, parse_stl
from cadclarify.protocol import Phase
from cadclarify.service import ServiceDeps, build_app
from cadclarify.store import SessionStore
from conftest import MOCK_WORKER, make_box_mesh

EP = Endpoint(base_url="scripted://", model_name="scripted")


def accept_json(text, misleading=False):
    return json.dumps({"is_misleading": misleading, "standardized_prompt": text})


def ask_json(*questions):
    return json.dumps({"is_misleading": True, "questions": list(questions)})


# --- store ----------------------------------------------------------------------

def test_store_replay_reconstructs_sessions(tmp_path):
    store = SessionStore(tmp_path / "s")
    sid1 = store.create("a plate", "p1")
    store.apply_accept(sid1, "a plate")
    sid2 = store.create("a cylinder", "p2")
    store.apply_ask(sid2, ("What radius?",))
    store.apply_answers(sid2, ("19",))
    store.apply_accept(sid2, "a cylinder radius 19", misleading=True)
    store.set_program(sid2, CadProgram(text="r = box(1,1,1)", lints=()))

    reborn = SessionStore(tmp_path / "s")
    assert set(reborn.ids()) == {sid1, sid2}
    assert reborn.get(sid1).state == store.get(sid1).state
    assert reborn.get(sid2).state == store.get(sid2).state
    assert reborn.get(sid2).state.phase is Phase.FINALIZED
    assert reborn.get(sid2).program.text == "r = box(1,1,1)"


def test_store_illegal_event_never_persisted(tmp_path):
    store = SessionStore(tmp_path / "s")
    sid = store.create("a plate", "p1")
    store.apply_accept(sid, "a plate")
    with pytest.raises(IllegalTransition):
        store.apply_accept(sid, "again")
    # the rejected event must not poison the log
    reborn = SessionStore(tmp_path / "s")
    assert reborn.get(sid).state.phase is Phase.FINALIZED


def test_store_mesh_blobs_and_snapshot(tmp_path):
    from cadclarify.execution import ExecOutcome
    from conftest import stl_bytes_from_arrays

    store = SessionStore(tmp_path / "s")
    sid = store.create("a cube", "p1")
    store.apply_accept(sid, "a cube")
    verts, tris = make_box_mesh(1, 1, 1)
    stl = stl_bytes_from_arrays(verts, tris)
    outcome = ExecOutcome(status="ok", mesh=parse_stl(stl), stl_bytes=stl)
    store.set_execution(sid, outcome)
    store.set_metrics(sid, ChamferResult(1.5e-4, 2048))
    assert store.mesh_bytes(sid) == stl
    assert store.get(sid).validity.valid
    snap = store.write_snapshot(sid)
    doc = json.loads(snap.read_text())
    assert doc["metrics"]["value_scaled"] == pytest.approx(0.15)
    reborn = SessionStore(tmp_path / "s")
    assert reborn.mesh_bytes(sid) == stl
    assert reborn.get(sid).metrics_value == pytest.approx(1.5e-4)


# --- service ----------------------------------------------------------------------

@pytest.fixture
def mesh_cache_dir(tmp_path):
    return tmp_path / "mesh_cache"


def make_client(tmp_path, mesh_cache_dir, replies):
    gw = Gateway(
        backend=ScriptedBackend([ScriptedReply(reply=r) for r in replies]), backoff_base=0.0
    )
    executor = CachingExecutor(ExecutorClient(MOCK_WORKER), MeshCache(mesh_cache_dir))
    deps = ServiceDeps(
        store=SessionStore(tmp_path / "sessions"),
        gw=gw,
        clarifier_endpoint=EP,
        coder_endpoint=EP,
        executor=executor,
        templates=TemplateRegistry(),
        sample_count=2048,
        seed=5,
    )
    return TestClient(build_app(deps)), deps


def test_unambiguous_flow(tmp_path, mesh_cache_dir):
    client, _ = make_client(tmp_path, mesh_cache_dir, [accept_json("a plate 200 by 150")])
    resp = client.post("/sessions", json={"prompt": "a plate 200 by 150"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["phase"] == "Finalized"
    assert "questions" not in body
    assert body["corrected"] == "a plate 200 by 150"


def test_full_ambiguous_flow_with_mesh_and_metrics(tmp_path, mesh_cache_dir):
    corrected = "a box 200 by 150 extruded 7"
    client, deps = make_client(
        tmp_path, mesh_cache_dir,
        [
            ask_json("What thickness?"),
            accept_json(corrected, misleading=True),
            "r = box(200, 150, 7)",
        ],
    )
    deps.register_reference("plate-1", TriMesh(*make_box_mesh(200, 150, 7)))

    created = client.post(
        "/sessions", json={"prompt": "a box 200 by 150", "prompt_id": "plate-1"}
    ).json()
    assert created["phase"] == "AwaitingAnswers"
    assert created["questions"] == ["What thickness?"]

    answered = client.post(f"/sessions/{created['id']}/answers", json={"answers": ["7"]}).json()
    assert answered["phase"] == "Finalized"
    assert answered["corrected"] == corrected

    generated = client.post(f"/sessions/{created['id']}/generate").json()
    assert generated["validity"]["valid"] is True
    assert generated["program"].startswith("r = box")

    mesh_resp = client.get(f"/sessions/{created['id']}/mesh")
    assert mesh_resp.status_code == 200
    mesh = parse_stl(mesh_resp.content)
    assert mesh.n_triangles == 12

    metrics = client.get(f"/sessions/{created['id']}/metrics").json()
    assert metrics["value"] == 0.0  # identical geometry, shared sampling seed

    view = client.get(f"/sessions/{created['id']}").json()
    assert view["phase"] == "Finalized"
    assert view["history"] == [{"question": "What thickness?", "answer": "7"}]


def test_error_mapping(tmp_path, mesh_cache_dir):
    client, _ = make_client(
        tmp_path, mesh_cache_dir,
        [accept_json("done"), ask_json("q1", "q2")],
    )
    assert client.get("/sessions/nope").status_code == 404

    finalized = client.post("/sessions", json={"prompt": "clear prompt"}).json()
    resp = client.post(f"/sessions/{finalized['id']}/answers", json={"answers": ["x"]})
    assert resp.status_code == 409  # answers after Finalized

    pending = client.post("/sessions", json={"prompt": "vague prompt"}).json()
    resp = client.post(f"/sessions/{pending['id']}/answers", json={"answers": ["only one"]})
    assert resp.status_code == 422  # arity mismatch against 2 questions

    resp = client.post(f"/sessions/{pending['id']}/generate")
    assert resp.status_code == 409  # not finalized yet


def test_upstream_model_failure_is_502(tmp_path, mesh_cache_dir):
    client, _ = make_client(tmp_path, mesh_cache_dir, [])  # script exhausted immediately
    resp = client.post("/sessions", json={"prompt": "anything"})
    assert resp.status_code == 502


def test_generate_uses_mesh_cache(tmp_path, mesh_cache_dir):
    program = "r = box(10, 10, 10)"
    replies = [accept_json("cube A"), program, accept_json("cube B"), program]
    client, deps = make_client(tmp_path, mesh_cache_dir, replies)
    a = client.post("/sessions", json={"prompt": "cube A"}).json()
    client.post(f"/sessions/{a['id']}/generate")
    sent_after_first = deps.executor.requests_sent
    b = client.post("/sessions", json={"prompt": "cube B"}).json()
    client.post(f"/sessions/{b['id']}/generate")
    assert deps.executor.requests_sent == sent_after_first  # cache hit, no re-execution


def test_service_restart_preserves_finalized_sessions(tmp_path, mesh_cache_dir):
    client, deps = make_client(tmp_path, mesh_cache_dir, [accept_json("a plate")])
    created = client.post("/sessions", json={"prompt": "a plate"}).json()
    deps.executor.close()

    # new process simulation: fresh deps over the same store directory
    client2, deps2 = make_client(tmp_path, mesh_cache_dir, [])
    view = client2.get(f"/sessions/{created['id']}").json()
    assert view["phase"] == "Finalized"
    assert view["corrected"]["text"] == "a plate"
    deps2.executor.close()
