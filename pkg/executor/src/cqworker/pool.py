"""Order-preserving dispatch over a pool of protocol worker subprocesses.

One wedged, crashed, or recycled worker never affects the other lanes: a
worker that dies mid-task yields an execution_error response for that task
and is respawned before the lane takes more work. Workers are recycled
after a fixed task count to bound interpreter-level leaks.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading

from . import PROTO_VERSION

DEFAULT_RECYCLE_AFTER = 100


class WorkerSpawnFailure(Exception):
    pass


def default_worker_argv() -> list[str]:
    return [sys.executable, "-m", "cqworker", "worker"]


class _Lane:
    """One worker subprocess plus its bookkeeping."""

    def __init__(self, argv: list[str], stats: dict):
        self.argv = argv
        self.stats = stats
        self.proc: subprocess.Popen | None = None
        self.tasks_done = 0

    def spawn(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise WorkerSpawnFailure(f"cannot spawn {self.argv!r}: {exc}") from exc
        handshake = self.proc.stdout.readline()
        try:
            hello = json.loads(handshake)
        except json.JSONDecodeError as exc:
            raise WorkerSpawnFailure(f"bad handshake {handshake!r}") from exc
        if hello.get("proto") != PROTO_VERSION:
            raise WorkerSpawnFailure(f"protocol mismatch: {hello!r}")
        self.tasks_done = 0
        self.stats["spawns"] += 1

    def ensure(self, recycle_after: int) -> None:
        if self.proc is None or self.proc.poll() is not None:
            self.spawn()
        elif self.tasks_done >= recycle_after:
            self.close()
            self.spawn()
            self.stats["recycles"] += 1

    def run(self, request: dict) -> dict:
        try:
            self.proc.stdin.write(json.dumps(request) + "\n")
            self.proc.stdin.flush()
            line = self.proc.stdout.readline()
        except (BrokenPipeError, OSError):
            line = ""
        self.tasks_done += 1
        if not line:
            exit_code = self.proc.poll()
            self.close()
            return {
                "status": "execution_error",
                "mesh": None,
                "stderr_excerpt": f"worker died mid-task (exit code {exit_code})",
                "duration": 0.0,
            }
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            self.close()
            return {
                "status": "execution_error",
                "mesh": None,
                "stderr_excerpt": f"garbled worker response {line[:80]!r}",
                "duration": 0.0,
            }

    def close(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self.proc = None


def pool_dispatch(
    requests: list[dict],
    parallelism: int,
    worker_argv: list[str] | None = None,
    recycle_after: int = DEFAULT_RECYCLE_AFTER,
    stats: dict | None = None,
) -> list[dict]:
    """Run every request, returning responses in input order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    argv = worker_argv or default_worker_argv()
    if stats is None:
        stats = {}
    stats.setdefault("spawns", 0)
    stats.setdefault("recycles", 0)

    tasks: queue.Queue = queue.Queue()
    for index, request in enumerate(requests):
        tasks.put((index, request))
    results: list[dict | None] = [None] * len(requests)
    spawn_errors: list[Exception] = []

    def lane_main() -> None:
        lane = _Lane(argv, stats)
        try:
            lane.spawn()
        except WorkerSpawnFailure as exc:
            spawn_errors.append(exc)
            return
        try:
            while True:
                try:
                    index, request = tasks.get_nowait()
                except queue.Empty:
                    return
                lane.ensure(recycle_after)
                results[index] = lane.run(request)
        finally:
            lane.close()

    threads = [threading.Thread(target=lane_main) for _ in range(min(parallelism, max(1, len(requests))))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if spawn_errors and any(r is None for r in results):
        raise spawn_errors[0]
    return [r for r in results if r is not None] if all(r is not None for r in results) else _fail_missing(results)


def _fail_missing(results: list[dict | None]) -> list[dict]:
    out = []
    for r in results:
        out.append(r if r is not None else {
            "status": "execution_error", "mesh": None,
            "stderr_excerpt": "no worker lane processed this task", "duration": 0.0,
        })
    return out
