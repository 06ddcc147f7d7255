"""Per-request program execution in a disposable child process.

The child gets a fresh interpreter namespace, a throwaway temp working
directory, and a CPU rlimit backstop; the parent kills it at the request
timeout. Nothing an untrusted program does (exceptions, os.abort, fork
bombs bounded by rlimit, file writes) can take the parent down - every
failure becomes a status in the response dict.
"""

from __future__ import annotations

import base64
import multiprocessing
import os
import resource
import shutil
import tempfile
import time
import traceback

from . import DEFAULT_TIMEOUT, DEFAULT_TOLERANCE, MAX_TIMEOUT, STDERR_EXCERPT_LIMIT
from .meshio import NotASolid, tessellate_result, write_binary_stl

_CTX = multiprocessing.get_context("fork")


def _child_main(program: str, tolerance: float, timeout: float, conn, workdir: str) -> None:
    os.chdir(workdir)
    try:
        resource.setrlimit(resource.RLIMIT_CPU, (int(timeout) + 5, int(timeout) + 5))
    except (ValueError, OSError):
        pass
    namespace: dict = {"__name__": "__main__"}
    try:
        exec(compile(program, "<program>", "exec"), namespace)
    except BaseException:
        conn.send({
            "status": "execution_error",
            "mesh": None,
            "stderr_excerpt": traceback.format_exc(limit=3)[-STDERR_EXCERPT_LIMIT:],
        })
        return
    if "r" not in namespace or namespace["r"] is None:
        conn.send({
            "status": "no_result",
            "mesh": None,
            "stderr_excerpt": "program defined no result variable 'r'",
        })
        return
    try:
        vertices, triangles = tessellate_result(namespace["r"], tolerance)
    except NotASolid as exc:
        conn.send({
            "status": "execution_error",
            "mesh": None,
            "stderr_excerpt": str(exc)[:STDERR_EXCERPT_LIMIT],
        })
        return
    except BaseException:
        conn.send({
            "status": "execution_error",
            "mesh": None,
            "stderr_excerpt": traceback.format_exc(limit=3)[-STDERR_EXCERPT_LIMIT:],
        })
        return
    if not triangles:
        conn.send({"status": "empty", "mesh": None,
                   "stderr_excerpt": "result tessellated to zero triangles"})
        return
    stl = write_binary_stl(vertices, triangles)
    conn.send({
        "status": "ok",
        "mesh": base64.b64encode(stl).decode("ascii"),
        "stderr_excerpt": "",
    })


def execute(program: str, timeout: float = DEFAULT_TIMEOUT,
            tolerance: float = DEFAULT_TOLERANCE) -> dict:
    """Run one program and return an ExecResponse dict (never raises)."""
    start = time.monotonic()

    def finish(payload: dict) -> dict:
        payload["duration"] = round(time.monotonic() - start, 6)
        return payload

    if not program:
        return finish({"status": "execution_error", "mesh": None,
                       "stderr_excerpt": "empty program"})
    if not (0 < timeout <= MAX_TIMEOUT):
        return finish({"status": "execution_error", "mesh": None,
                       "stderr_excerpt": f"timeout must be in (0, {MAX_TIMEOUT:g}]"})

    workdir = tempfile.mkdtemp(prefix="cqworker-")
    parent_conn, child_conn = _CTX.Pipe(duplex=False)
    proc = _CTX.Process(
        target=_child_main, args=(program, tolerance, timeout, child_conn, workdir)
    )
    proc.start()
    child_conn.close()
    try:
        if parent_conn.poll(timeout):
            response = parent_conn.recv()
            proc.join(timeout=5.0)
            if proc.is_alive():
                proc.kill()
                proc.join()
            return finish(response)
        proc.terminate()
        proc.join(timeout=2.0)
        if proc.is_alive():
            proc.kill()
            proc.join()
        return finish({"status": "timeout", "mesh": None,
                       "stderr_excerpt": f"killed after {timeout:g}s"})
    except EOFError:
        proc.join()
        return finish({
            "status": "execution_error", "mesh": None,
            "stderr_excerpt": f"worker process died (exit code {proc.exitcode})",
        })
    finally:
        parent_conn.close()
        shutil.rmtree(workdir, ignore_errors=True)
