"""Pool dispatch tests: ordering, isolation, recycling, spawn failures."""

from __future__ import annotations

import base64
import struct

import pytest

from cqworker.pool import WorkerSpawnFailure, pool_dispatch
from conftest import CUBE_PROGRAM, INFINITE_LOOP_PROGRAM, KILL_WORKER_PROGRAM


def box_program(size: float) -> str:
    return CUBE_PROGRAM.replace("Box(10, 10, 10)", f"Box({size}, 10, 10)")


def first_vertex_x(mesh_b64: str) -> float:
    data = base64.b64decode(mesh_b64)
    # triangle 0 is (0,2,1): vertex 2 of the footprint carries (sx, sy, 0)
    xs = []
    (count,) = struct.unpack_from("<I", data, 80)
    for i in range(count):
        base = 84 + 50 * i + 12
        for j in range(3):
            xs.append(struct.unpack_from("<3f", data, base + 12 * j)[0])
    return max(xs)


def test_order_preserving_dispatch():
    requests = [{"program": box_program(i + 1), "timeout": 15} for i in range(10)]
    responses = pool_dispatch(requests, parallelism=4)
    assert len(responses) == 10
    assert all(r["status"] == "ok" for r in responses)
    widths = [first_vertex_x(r["mesh"]) for r in responses]
    assert widths == [float(i + 1) for i in range(10)]


def test_one_timeout_among_ten():
    requests = [{"program": CUBE_PROGRAM, "timeout": 15} for _ in range(10)]
    requests[4] = {"program": INFINITE_LOOP_PROGRAM, "timeout": 1}
    responses = pool_dispatch(requests, parallelism=3)
    statuses = [r["status"] for r in responses]
    assert statuses.count("ok") == 9
    assert statuses[4] == "timeout"


def test_worker_crash_mid_task_does_not_poison_pool():
    requests = [{"program": CUBE_PROGRAM, "timeout": 15} for _ in range(10)]
    requests[3] = {"program": KILL_WORKER_PROGRAM, "timeout": 15}
    stats: dict = {}
    responses = pool_dispatch(requests, parallelism=2, stats=stats)
    assert responses[3]["status"] == "execution_error"
    assert "died" in responses[3]["stderr_excerpt"]
    others = [r["status"] for i, r in enumerate(responses) if i != 3]
    assert others == ["ok"] * 9
    assert stats["spawns"] >= 3  # two lanes plus at least one respawn


def test_workers_recycled_after_task_budget():
    requests = [{"program": CUBE_PROGRAM, "timeout": 15} for _ in range(5)]
    stats: dict = {}
    responses = pool_dispatch(requests, parallelism=1, recycle_after=2, stats=stats)
    assert all(r["status"] == "ok" for r in responses)
    assert stats["recycles"] >= 2


def test_spawn_failure_raises():
    with pytest.raises(WorkerSpawnFailure):
        pool_dispatch([{"program": CUBE_PROGRAM}], parallelism=1,
                      worker_argv=["/no/such/worker-binary"])


def test_parallelism_validation():
    with pytest.raises(ValueError):
        pool_dispatch([], parallelism=0)
    assert pool_dispatch([], parallelism=3) == []
