"""Result-object tessellation and deterministic binary STL export.

The result variable may hold a CadQuery Workplane (unwrapped via .val()),
a CadQuery Shape (tessellated via .tessellate(tolerance) -> (vertices,
triangles)), or any object exposing the same tessellate surface. Vertices
may be CadQuery Vectors (.x/.y/.z) or plain sequences.
"""

from __future__ import annotations

import math
import struct

from . import DEFAULT_TOLERANCE


class NotASolid(Exception):
    """The result variable does not expose any tessellation surface."""


def _vertex_xyz(v) -> tuple[float, float, float]:
    if hasattr(v, "x") and hasattr(v, "y") and hasattr(v, "z"):
        return float(v.x), float(v.y), float(v.z)
    x, y, z = v
    return float(x), float(y), float(z)


def tessellate_result(obj, tolerance: float = DEFAULT_TOLERANCE):
    """Turn the program's result object into (vertices, triangles) lists."""
    if hasattr(obj, "val") and callable(getattr(obj, "val")):
        try:
            obj = obj.val()
        except Exception as exc:
            raise NotASolid(f"result holds no underlying shape: {exc}") from exc
    if hasattr(obj, "tessellate") and callable(getattr(obj, "tessellate")):
        raw_vertices, raw_triangles = obj.tessellate(tolerance)
    elif isinstance(obj, dict) and "vertices" in obj and "triangles" in obj:
        raw_vertices, raw_triangles = obj["vertices"], obj["triangles"]
    else:
        raise NotASolid(f"result of type {type(obj).__name__} is not a solid or workplane")
    vertices = [_vertex_xyz(v) for v in raw_vertices]
    triangles = [(int(t[0]), int(t[1]), int(t[2])) for t in raw_triangles]
    for tri in triangles:
        if any(i < 0 or i >= len(vertices) for i in tri):
            raise NotASolid("tessellation produced out-of-range vertex indices")
    return vertices, triangles


def _normal(a, b, c) -> tuple[float, float, float]:
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    nx, ny, nz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
    length = math.sqrt(nx * nx + ny * ny + nz * nz)
    if length == 0.0:
        return 0.0, 0.0, 0.0
    return nx / length, ny / length, nz / length


def write_binary_stl(vertices, triangles) -> bytes:
    """Binary STL bytes; a pure function of the mesh, so bit-reproducible."""
    out = bytearray(b"\0" * 80)
    out += struct.pack("<I", len(triangles))
    for tri in triangles:
        a, b, c = vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]
        out += struct.pack("<3f", *_normal(a, b, c))
        for p in (a, b, c):
            out += struct.pack("<3f", *p)
        out += struct.pack("<H", 0)
    return bytes(out)
