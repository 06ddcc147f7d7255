"""Stdio worker loop: one request JSON line in, one response JSON line out.

The worker announces {"proto": 1} on startup. Request errors (malformed
JSON, bad fields) become execution_error responses; the loop itself only
ends at stdin EOF, so no program input can terminate the worker.
"""

from __future__ import annotations

import json
import sys

from . import DEFAULT_TIMEOUT, DEFAULT_TOLERANCE, PROTO_VERSION
from .runner import execute


def handle_request(line: str, tolerance: float = DEFAULT_TOLERANCE) -> dict:
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"status": "execution_error", "mesh": None,
                "stderr_excerpt": f"malformed request line: {exc}", "duration": 0.0}
    if not isinstance(request, dict):
        return {"status": "execution_error", "mesh": None,
                "stderr_excerpt": "request must be a JSON object", "duration": 0.0}
    export_format = request.get("export_format", "stl-binary")
    if export_format != "stl-binary":
        return {"status": "execution_error", "mesh": None,
                "stderr_excerpt": f"unsupported export_format {export_format!r}",
                "duration": 0.0}
    program = request.get("program", "")
    try:
        timeout = float(request.get("timeout", DEFAULT_TIMEOUT))
    except (TypeError, ValueError):
        return {"status": "execution_error", "mesh": None,
                "stderr_excerpt": "timeout must be a number", "duration": 0.0}
    return execute(program, timeout=timeout, tolerance=tolerance)


def run_worker(stdin=None, stdout=None, tolerance: float = DEFAULT_TOLERANCE) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stdout.write(json.dumps({"proto": PROTO_VERSION}) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        response = handle_request(line, tolerance)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
    return 0
