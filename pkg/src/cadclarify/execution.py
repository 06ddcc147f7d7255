"""Client for the program-execution worker protocol, plus a mesh cache.

The worker is any subprocess that speaks the line protocol: it prints a
version handshake ``{"proto": 1}`` on startup, then answers one request
JSON line on stdin with one response JSON line on stdout. The production
worker lives in its own package; tests point the client at a mock with the
same protocol. Responses carry the mesh as base64-encoded binary STL.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import queue
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import ExecutorError, MalformedFile
from .geometry import TriMesh, parse_stl

logger = logging.getLogger(__name__)

PROTO_VERSION = 1
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class ExecOutcome:
    status: str  # ok | execution_error | timeout | no_result | empty
    mesh: TriMesh | None
    stderr_excerpt: str = ""
    duration: float = 0.0
    stl_bytes: bytes | None = None

    @classmethod
    def from_wire(cls, obj: dict) -> "ExecOutcome":
        status = obj.get("status", "execution_error")
        mesh = None
        stl = None
        if obj.get("mesh"):
            try:
                stl = base64.b64decode(obj["mesh"])
                mesh = parse_stl(stl)
            except (MalformedFile, ValueError) as exc:
                return cls(
                    status="execution_error",
                    mesh=None,
                    stderr_excerpt=f"undecodable mesh payload: {exc}",
                    duration=float(obj.get("duration", 0.0)),
                )
        return cls(
            status=status,
            mesh=mesh,
            stderr_excerpt=obj.get("stderr_excerpt", ""),
            duration=float(obj.get("duration", 0.0)),
            stl_bytes=stl,
        )

    def to_wire(self) -> dict:
        return {
            "status": self.status,
            "mesh": base64.b64encode(self.stl_bytes).decode("ascii") if self.stl_bytes else None,
            "stderr_excerpt": self.stderr_excerpt,
            "duration": self.duration,
        }


def program_digest(program: str) -> str:
    return hashlib.sha256(program.encode("utf-8")).hexdigest()[:24]


class ExecutorClient:
    """One worker subprocess driven over the line protocol.

    The client enforces its own deadline (request timeout plus slack) so a
    wedged worker cannot wedge the host: on a client-side deadline the
    worker is killed and respawned, and the request reports ``timeout``.
    """

    def __init__(self, worker_argv: list[str], timeout_slack: float = 5.0):
        if not worker_argv:
            raise ExecutorError("worker_argv must be non-empty")
        self.worker_argv = list(worker_argv)
        self.timeout_slack = timeout_slack
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()

    def _spawn(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.worker_argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ExecutorError(f"cannot spawn worker {self.worker_argv!r}: {exc}") from exc
        self._lines = queue.Queue()
        thread = threading.Thread(target=self._pump, args=(self._proc,), daemon=True)
        thread.start()
        handshake = self._read_line(timeout=10.0)
        if handshake is None or handshake is self._EOF:
            raise ExecutorError("worker produced no handshake")
        try:
            hello = json.loads(handshake)
        except json.JSONDecodeError as exc:
            raise ExecutorError(f"bad handshake line {handshake!r}") from exc
        if hello.get("proto") != PROTO_VERSION:
            raise ExecutorError(f"unsupported worker protocol: {hello!r}")

    _EOF = object()

    def _pump(self, proc: subprocess.Popen) -> None:
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(self._EOF)

    def _read_line(self, timeout: float):
        """Returns a line, _EOF when the worker died, or None on deadline."""
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            return None

    def _ensure_worker(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()

    def _kill_worker(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def execute(self, program: str, timeout: float = DEFAULT_TIMEOUT) -> ExecOutcome:
        if not program:
            raise ValueError("program must be non-empty")
        with self._lock:
            self._ensure_worker()
            request = {"program": program, "timeout": timeout, "export_format": "stl-binary"}
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                self._kill_worker()
                return ExecOutcome("execution_error", None, "worker pipe broken")
            line = self._read_line(timeout=timeout + self.timeout_slack)
            if line is None:
                self._kill_worker()
                return ExecOutcome("timeout", None, "client-side deadline expired", timeout)
            if line is self._EOF:
                self._kill_worker()
                return ExecOutcome("execution_error", None, "worker exited mid-task")
            try:
                return ExecOutcome.from_wire(json.loads(line))
            except json.JSONDecodeError:
                self._kill_worker()
                return ExecOutcome("execution_error", None, f"garbled response {line[:80]!r}")

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
                try:
                    self._proc.wait(timeout=2.0)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MeshCache:
    """Content-addressed execution cache keyed by program-text digest.

    A cache hit means an identical program is never re-executed; outcomes
    (including failures) are stored as JSON next to the raw STL bytes.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _paths(self, program: str) -> tuple[Path, Path]:
        key = program_digest(program)
        return self.root / f"{key}.json", self.root / f"{key}.stl"

    def get(self, program: str) -> ExecOutcome | None:
        meta_path, stl_path = self._paths(program)
        if not meta_path.exists():
            return None
        obj = json.loads(meta_path.read_text(encoding="utf-8"))
        stl = stl_path.read_bytes() if stl_path.exists() else None
        mesh = parse_stl(stl) if stl else None
        return ExecOutcome(
            status=obj["status"],
            mesh=mesh,
            stderr_excerpt=obj.get("stderr_excerpt", ""),
            duration=obj.get("duration", 0.0),
            stl_bytes=stl,
        )

    def put(self, program: str, outcome: ExecOutcome) -> None:
        meta_path, stl_path = self._paths(program)
        meta = {
            "status": outcome.status,
            "stderr_excerpt": outcome.stderr_excerpt,
            "duration": outcome.duration,
        }
        if outcome.stl_bytes:
            stl_path.write_bytes(outcome.stl_bytes)
        meta_path.write_text(json.dumps(meta), encoding="utf-8")

    def has(self, program: str) -> bool:
        return self._paths(program)[0].exists()


class CachingExecutor:
    """Executor facade combining a client (or pool) with the mesh cache."""

    def __init__(self, client: ExecutorClient, cache: MeshCache | None = None):
        self.client = client
        self.cache = cache
        self.requests_sent = 0

    def execute(self, program: str, timeout: float = DEFAULT_TIMEOUT) -> ExecOutcome:
        if self.cache is not None:
            hit = self.cache.get(program)
            if hit is not None:
                return hit
        outcome = self.client.execute(program, timeout)
        self.requests_sent += 1
        if self.cache is not None:
            self.cache.put(program, outcome)
        return outcome

    def close(self) -> None:
        self.client.close()


class ExecutorPool:
    """Order-preserving parallel map over several worker clients."""

    def __init__(self, worker_argv: list[str], parallelism: int = 2, cache: MeshCache | None = None):
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.parallelism = parallelism
        self.cache = cache
        self._clients = [ExecutorClient(worker_argv) for _ in range(parallelism)]
        self._free: queue.Queue = queue.Queue()
        for c in self._clients:
            self._free.put(c)

    def _run_one(self, program: str, timeout: float) -> ExecOutcome:
        if self.cache is not None:
            hit = self.cache.get(program)
            if hit is not None:
                return hit
        client = self._free.get()
        try:
            outcome = client.execute(program, timeout)
        finally:
            self._free.put(client)
        if self.cache is not None:
            self.cache.put(program, outcome)
        return outcome

    def execute(self, program: str, timeout: float = DEFAULT_TIMEOUT) -> ExecOutcome:
        return self._run_one(program, timeout)

    def execute_many(self, programs: list[str], timeout: float = DEFAULT_TIMEOUT) -> list[ExecOutcome]:
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(lambda p: self._run_one(p, timeout), programs))

    def close(self) -> None:
        for c in self._clients:
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
