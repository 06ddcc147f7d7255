"""Shared fixtures: the cube program and an independent STL reader."""

from __future__ import annotations

import struct

CUBE_PROGRAM = """\
class Box:
    def __init__(self, sx, sy, sz):
        self.sx, self.sy, self.sz = sx, sy, sz

    def tessellate(self, tolerance):
        sx, sy, sz = self.sx, self.sy, self.sz
        v = [(0, 0, 0), (sx, 0, 0), (sx, sy, 0), (0, sy, 0),
             (0, 0, sz), (sx, 0, sz), (sx, sy, sz), (0, sy, sz)]
        t = [(0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7),
             (0, 1, 5), (0, 5, 4), (1, 2, 6), (1, 6, 5),
             (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7)]
        return v, t

r = Box(10, 10, 10)
"""

INFINITE_LOOP_PROGRAM = "while True:\n    pass\n"

NAME_ERROR_PROGRAM = "r = undefined_symbol + 1\n"

ABORT_PROGRAM = "import os\nos.abort()\n"

# kills the protocol worker itself (the child's parent), not just the child
KILL_WORKER_PROGRAM = "import os, signal\nos.kill(os.getppid(), signal.SIGKILL)\n"


def read_stl(data: bytes):
    """Minimal independent binary STL reader: (triangle_count, vertices)."""
    (count,) = struct.unpack_from("<I", data, 80)
    assert len(data) == 84 + 50 * count, "unexpected binary STL size"
    vertices = []
    for i in range(count):
        base = 84 + 50 * i + 12  # skip normal
        for j in range(3):
            vertices.append(struct.unpack_from("<3f", data, base + 12 * j))
    return count, vertices
