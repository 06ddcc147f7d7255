"""Event-sourced session store: append-only log, snapshots, mesh blobs.

Every mutation is one event line; replaying the log rebuilds every session
exactly, so a crashed service resumes where it stopped. Mesh bytes live in
a content-addressed blob directory and events reference them by digest.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from .agents import CadProgram
from .execution import ExecOutcome
from .geometry import ChamferResult, TriMesh, ValidityVerdict, classify_validity, parse_stl
from .protocol import (
    Accept,
    AnswersSubmitted,
    Ask,
    Prompt,
    SessionState,
    advance,
    new_session,
    session_to_dict,
)


@dataclass
class StoredSession:
    id: str
    state: SessionState
    created_at: float
    updated_at: float
    program: CadProgram | None = None
    execution_status: str | None = None
    stl_digest: str | None = None
    stderr_excerpt: str = ""
    metrics_value: float | None = None
    metrics_n_points: int | None = None

    @property
    def validity(self) -> ValidityVerdict | None:
        if self.execution_status is None:
            return None
        if self.execution_status == "ok":
            # a stored digest implies a non-empty exported mesh
            if self.stl_digest is None:
                return ValidityVerdict(valid=False, failure_kind="EmptyGeometry")
            return ValidityVerdict(valid=True)
        return classify_validity(self.execution_status, None)

    def to_dict(self) -> dict:
        doc = session_to_dict(
            self.id, self.state,
            {"created": self.created_at, "updated": self.updated_at},
        )
        doc["program"] = None if self.program is None else {
            "text": self.program.text, "lints": list(self.program.lints)
        }
        doc["validity"] = None
        if self.execution_status is not None:
            verdict = self.validity
            doc["validity"] = {
                "valid": verdict.valid,
                "failure_kind": verdict.failure_kind,
                "stderr_excerpt": self.stderr_excerpt,
            }
        doc["metrics"] = None
        if self.metrics_value is not None:
            doc["metrics"] = {
                "value": self.metrics_value,
                "value_scaled": self.metrics_value * 1e3,
                "n_points": self.metrics_n_points,
            }
        return doc


class SessionStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.jsonl"
        self.blobs = self.root / "blobs"
        self.blobs.mkdir(exist_ok=True)
        self.snapshots = self.root / "snapshots"
        self.snapshots.mkdir(exist_ok=True)
        self._sessions: dict[str, StoredSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global_lock = threading.Lock()
        self._replay()

    # --- persistence ---------------------------------------------------

    def _replay(self) -> None:
        if not self.events_path.exists():
            return
        with open(self.events_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply_event(json.loads(line), record=False)

    def _append(self, event: dict) -> None:
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def _lock_for(self, sid: str) -> threading.Lock:
        with self._global_lock:
            if sid not in self._locks:
                self._locks[sid] = threading.Lock()
            return self._locks[sid]

    def _apply_event(self, event: dict, record: bool = True) -> StoredSession:
        kind = event["kind"]
        sid = event["sid"]
        ts = event["ts"]
        if kind == "created":
            prompt = Prompt(text=event["prompt_text"], id=event["prompt_id"])
            stored = StoredSession(
                id=sid,
                state=new_session(prompt, max_ask_rounds=event.get("max_ask_rounds", 1)),
                created_at=ts,
                updated_at=ts,
            )
            self._sessions[sid] = stored
        else:
            stored = self._sessions[sid]
            if kind == "accept":
                stored.state = advance(
                    stored.state, Accept(event["standardized"], event.get("misleading", False))
                )
            elif kind == "ask":
                stored.state = advance(stored.state, Ask(tuple(event["questions"])))
            elif kind == "answers":
                stored.state = advance(stored.state, AnswersSubmitted(tuple(event["answers"])))
            elif kind == "program":
                stored.program = CadProgram(text=event["text"], lints=tuple(event["lints"]))
            elif kind == "execution":
                stored.execution_status = event["status"]
                stored.stl_digest = event.get("stl_digest")
                stored.stderr_excerpt = event.get("stderr_excerpt", "")
            elif kind == "metrics":
                stored.metrics_value = event["value"]
                stored.metrics_n_points = event.get("n_points")
            else:
                raise ValueError(f"unknown event kind {kind!r}")
            stored.updated_at = ts
        if record:
            self._append(event)
        return stored

    def _emit(self, sid: str, kind: str, **payload) -> StoredSession:
        event = {"sid": sid, "kind": kind, "ts": time.time(), **payload}
        return self._apply_event(event, record=True)

    # --- public API ------------------------------------------------------

    def create(self, prompt_text: str, prompt_id: str | None = None, max_ask_rounds: int = 1) -> str:
        sid = uuid.uuid4().hex[:12]
        self._emit(
            sid, "created",
            prompt_text=prompt_text,
            prompt_id=prompt_id or f"session:{sid}",
            max_ask_rounds=max_ask_rounds,
        )
        return sid

    def get(self, sid: str) -> StoredSession:
        if sid not in self._sessions:
            raise KeyError(sid)
        return self._sessions[sid]

    def ids(self) -> list[str]:
        return list(self._sessions)

    def apply_accept(self, sid: str, standardized: str, misleading: bool = False) -> StoredSession:
        with self._lock_for(sid):
            return self._emit(sid, "accept", standardized=standardized, misleading=misleading)

    def apply_ask(self, sid: str, questions: tuple[str, ...]) -> StoredSession:
        with self._lock_for(sid):
            return self._emit(sid, "ask", questions=list(questions))

    def apply_answers(self, sid: str, answers: tuple[str, ...]) -> StoredSession:
        # _apply_event advances first and appends only on success, so an
        # illegal event never reaches the log
        with self._lock_for(sid):
            return self._emit(sid, "answers", answers=list(answers))

    def set_program(self, sid: str, program: CadProgram) -> StoredSession:
        with self._lock_for(sid):
            return self._emit(sid, "program", text=program.text, lints=list(program.lints))

    def set_execution(self, sid: str, outcome: ExecOutcome) -> StoredSession:
        digest = None
        if outcome.stl_bytes:
            digest = hashlib.sha256(outcome.stl_bytes).hexdigest()[:24]
            blob = self.blobs / f"{digest}.stl"
            if not blob.exists():
                blob.write_bytes(outcome.stl_bytes)
        with self._lock_for(sid):
            return self._emit(
                sid, "execution",
                status=outcome.status,
                stl_digest=digest,
                stderr_excerpt=outcome.stderr_excerpt[:400],
            )

    def set_metrics(self, sid: str, result: ChamferResult) -> StoredSession:
        with self._lock_for(sid):
            return self._emit(sid, "metrics", value=result.value, n_points=result.n_points)

    def mesh_bytes(self, sid: str) -> bytes | None:
        stored = self.get(sid)
        if stored.stl_digest is None:
            return None
        blob = self.blobs / f"{stored.stl_digest}.stl"
        return blob.read_bytes() if blob.exists() else None

    def mesh(self, sid: str) -> TriMesh | None:
        data = self.mesh_bytes(sid)
        return parse_stl(data) if data else None

    def write_snapshot(self, sid: str) -> Path:
        stored = self.get(sid)
        path = self.snapshots / f"{sid}.json"
        path.write_text(json.dumps(stored.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")
        return path
