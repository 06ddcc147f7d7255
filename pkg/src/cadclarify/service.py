"""HTTP surface for live clarification sessions.

Routing only: every state change goes through the session store, which
defers to the protocol's transition function, so the HTTP layer can't
invent transitions of its own. Upstream model failures surface as 502,
illegal transitions as 409, arity mismatches as 422.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .agents import TemplateRegistry, clarify, finalize_spec, generate_code
from .errors import (
    ArityMismatch,
    IllegalTransition,
    SchemaViolation,
    ScriptExhausted,
    TransportError,
)
from .gateway import Endpoint, Gateway
from .geometry import TriMesh, mesh_chamfer
from .protocol import Ask, CorrectedSpec, Phase
from .store import SessionStore

logger = logging.getLogger(__name__)


class CreateSessionBody(BaseModel):
    prompt: str
    prompt_id: str | None = None


class AnswersBody(BaseModel):
    answers: list[str]


class ServiceDeps:
    """Everything the routes need, injectable for tests."""

    def __init__(
        self,
        store: SessionStore,
        gw: Gateway,
        clarifier_endpoint: Endpoint,
        coder_endpoint: Endpoint,
        executor,
        templates: TemplateRegistry | None = None,
        execution_timeout: float = 30.0,
        sample_count: int = 4096,
        seed: int = 0,
    ):
        self.store = store
        self.gw = gw
        self.clarifier_endpoint = clarifier_endpoint
        self.coder_endpoint = coder_endpoint
        self.executor = executor
        self.templates = templates or TemplateRegistry()
        self.execution_timeout = execution_timeout
        self.sample_count = sample_count
        self.seed = seed
        self.references: dict[str, TriMesh] = {}

    def register_reference(self, prompt_id: str, mesh: TriMesh) -> None:
        self.references[prompt_id] = mesh


def _session_view(stored) -> dict:
    return stored.to_dict()


def build_app(deps: ServiceDeps, cors_origin: str = "*") -> FastAPI:
    app = FastAPI(title="cadclarify", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[cors_origin] if cors_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(IllegalTransition)
    async def illegal_transition(request, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(ArityMismatch)
    async def arity_mismatch(request, exc):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(KeyError)
    async def unknown_session(request, exc):
        return JSONResponse(status_code=404, content={"error": f"unknown session {exc}"})

    for upstream in (TransportError, SchemaViolation, ScriptExhausted):
        @app.exception_handler(upstream)
        async def upstream_failure(request, exc):
            return JSONResponse(status_code=502, content={"error": str(exc)})

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        sid = deps.store.create(body.prompt, body.prompt_id)
        stored = deps.store.get(sid)
        action = clarify(
            stored.state.prompt, deps.gw, deps.clarifier_endpoint,
            deps.templates.get("clarifier"),
        )
        if isinstance(action, Ask):
            stored = deps.store.apply_ask(sid, action.questions)
            return {"id": sid, "phase": stored.state.phase.value,
                    "questions": list(stored.state.pending)}
        stored = deps.store.apply_accept(sid, action.standardized, action.misleading)
        return {"id": sid, "phase": stored.state.phase.value,
                "corrected": stored.state.corrected.text}

    @app.post("/sessions/{sid}/answers")
    def submit_answers(sid: str, body: AnswersBody):
        stored = deps.store.get(sid)
        questions = stored.state.pending
        stored = deps.store.apply_answers(sid, tuple(body.answers))
        corrected = finalize_spec(
            stored.state.prompt, list(questions), body.answers,
            deps.gw, deps.clarifier_endpoint, deps.templates.get("clarifier"),
        )
        stored = deps.store.apply_accept(sid, corrected.text, misleading=True)
        return {"phase": stored.state.phase.value, "corrected": stored.state.corrected.text}

    @app.post("/sessions/{sid}/generate")
    def generate(sid: str):
        stored = deps.store.get(sid)
        if stored.state.phase is not Phase.FINALIZED:
            raise IllegalTransition(f"cannot generate in phase {stored.state.phase.value}")
        program = generate_code(
            CorrectedSpec(stored.state.corrected.text, sid),
            deps.gw, deps.coder_endpoint, deps.templates.get("coder"),
        )
        deps.store.set_program(sid, program)
        outcome = deps.executor.execute(program.text, deps.execution_timeout)
        stored = deps.store.set_execution(sid, outcome)
        verdict = stored.validity
        if verdict.valid:
            reference = deps.references.get(stored.state.prompt.id)
            if reference is not None:
                result = mesh_chamfer(
                    reference, deps.store.mesh(sid), n=deps.sample_count, seed=deps.seed
                )
                deps.store.set_metrics(sid, result)
        return {
            "program": program.text,
            "lints": list(program.lints),
            "validity": {"valid": verdict.valid, "failure_kind": verdict.failure_kind,
                         "stderr_excerpt": stored.stderr_excerpt},
        }

    @app.get("/sessions/{sid}/mesh")
    def mesh(sid: str):
        data = deps.store.mesh_bytes(sid)
        if data is None:
            return JSONResponse(status_code=404, content={"error": "no mesh for session"})
        return Response(content=data, media_type="model/stl")

    @app.get("/sessions/{sid}/metrics")
    def metrics(sid: str):
        stored = deps.store.get(sid)
        if stored.metrics_value is None:
            return JSONResponse(
                status_code=404, content={"error": "no metrics (reference not registered?)"}
            )
        return {
            "value": stored.metrics_value,
            "value_scaled": stored.metrics_value * 1e3,
            "n_points": stored.metrics_n_points,
        }

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return _session_view(deps.store.get(sid))

    return app


def serve(deps: ServiceDeps, host: str, port: int, cors_origin: str = "*") -> None:
    import uvicorn

    uvicorn.run(build_app(deps, cors_origin), host=host, port=port)
