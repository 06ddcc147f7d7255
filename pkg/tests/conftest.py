"""Shared fixtures: synthetic meshes, independent STL bytes, mock executor."""

from __future__ import annotations

import math
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"
MOCK_WORKER = [sys.executable, str(DATA_DIR / "mock_worker.py")]


def make_box_mesh(sx: float, sy: float, sz: float, origin=(0.0, 0.0, 0.0)):
    """Axis-aligned box as (vertices, triangles) arrays, 12 triangles."""
    ox, oy, oz = origin
    verts = np.array(
        [
            [ox, oy, oz],
            [ox + sx, oy, oz],
            [ox + sx, oy + sy, oz],
            [ox, oy + sy, oz],
            [ox, oy, oz + sz],
            [ox + sx, oy, oz + sz],
            [ox + sx, oy + sy, oz + sz],
            [ox, oy + sy, oz + sz],
        ],
        dtype=np.float64,
    )
    tris = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # front
            [1, 2, 6], [1, 6, 5],  # right
            [2, 3, 7], [2, 7, 6],  # back
            [3, 0, 4], [3, 4, 7],  # left
        ],
        dtype=np.int64,
    )
    return verts, tris


def make_cylinder_mesh(radius: float, height: float, center=(0.0, 0.0, 0.0), segments=48):
    """Closed cylinder along +Z starting at center, fan-capped."""
    cx, cy, cz = center
    ring_bot = [
        (cx + radius * math.cos(2 * math.pi * i / segments),
         cy + radius * math.sin(2 * math.pi * i / segments),
         cz)
        for i in range(segments)
    ]
    ring_top = [(x, y, cz + height) for x, y, _ in ring_bot]
    verts = ring_bot + ring_top + [(cx, cy, cz), (cx, cy, cz + height)]
    bot_c = 2 * segments
    top_c = 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append([i, j, segments + i])
        tris.append([j, segments + j, segments + i])
        tris.append([bot_c, j, i])
        tris.append([top_c, segments + i, segments + j])
    return np.asarray(verts, dtype=np.float64), np.asarray(tris, dtype=np.int64)


def stl_bytes_from_arrays(verts: np.ndarray, tris: np.ndarray) -> bytes:
    """Independent binary STL writer used as the parsing oracle."""
    out = bytearray(b"\0" * 80)
    out += struct.pack("<I", len(tris))
    for t in tris:
        a, b, c = verts[t[0]], verts[t[1]], verts[t[2]]
        n = np.cross(b - a, c - a)
        norm = float(np.linalg.norm(n))
        n = n / norm if norm > 0 else np.zeros(3)
        out += struct.pack("<3f", *[float(x) for x in n])
        for p in (a, b, c):
            out += struct.pack("<3f", *[float(x) for x in p])
        out += struct.pack("<H", 0)
    return bytes(out)


@pytest.fixture
def cube_stl_bytes() -> bytes:
    verts, tris = make_box_mesh(1.0, 1.0, 1.0)
    return stl_bytes_from_arrays(verts, tris)


ASCII_TRIANGLE_STL = """solid tri
  facet normal 0 0 1
    outer loop
      vertex 0 0 0
      vertex 1 0 0
      vertex 0 1 0
    endloop
  endfacet
endsolid tri
"""
