"""Mesh ingestion, surface sampling, Chamfer distance, and aggregate metrics.

Conventions pinned here and used everywhere downstream:

* Chamfer distance is the sum of the two directional means of *squared*
  nearest-neighbor distances. Reported values are scaled by 1e3.
* Before comparison both clouds receive one transform derived from the
  reference cloud alone: translate the reference bounding-box center to the
  origin and scale its max extent to 1. Scale errors in the candidate are
  therefore penalized rather than hidden.
* Surface sampling is area-weighted with uniform barycentric placement and
  is deterministic per seed.
"""

from __future__ import annotations

import hashlib
import io
import statistics
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateExtent, MalformedFile, ZeroArea

REPORT_SCALE = 1e3
DEFAULT_SAMPLE_COUNT = 8192

_STL_HEADER = 80
_STL_TRI_BYTES = 50


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh; vertices float64 (n,3), triangles int (m,3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if np.isnan(v).any():
            raise ValueError("mesh vertices contain NaN")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise ValueError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    seed: int = 0
    source_mesh_hash: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        )

    def __len__(self) -> int:
        return len(self.points)

    def to_xyz(self) -> str:
        """Plain ``x y z`` lines, for eyeballing clouds in external viewers."""
        return "\n".join(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in self.points)


@dataclass(frozen=True)
class NormalizationTransform:
    """p' = (p - center) / scale, derived from the reference cloud."""

    center: tuple[float, float, float]
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) / self.scale


@dataclass(frozen=True)
class ChamferResult:
    value: float
    n_points: int
    normalization: NormalizationTransform | None = None

    @property
    def value_scaled(self) -> float:
        return self.value * REPORT_SCALE


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    failure_kind: str | None = None  # ExecutionError | Timeout | NoResultVariable | EmptyGeometry

    def __post_init__(self):
        if self.valid != (self.failure_kind is None):
            raise ValueError("valid iff failure_kind is None")


# --- STL ingestion ---------------------------------------------------------

def parse_stl(data: bytes) -> TriMesh:
    """Parse binary or ASCII STL bytes into an indexed mesh.

    Binary is detected by the exact size relation 84 + 50*count == len; an
    ASCII body must start with ``solid``. Duplicate vertices are merged by
    exact coordinate equality.
    """
    if len(data) >= _STL_HEADER + 4:
        (count,) = struct.unpack_from("<I", data, _STL_HEADER)
        if _STL_HEADER + 4 + count * _STL_TRI_BYTES == len(data):
            return _parse_binary_stl(data, count)
    head = data[:16].lstrip()
    if head.startswith(b"solid"):
        return _parse_ascii_stl(data)
    raise MalformedFile("bytes are neither a well-sized binary STL nor an ASCII STL")


def _parse_binary_stl(data: bytes, count: int) -> TriMesh:
    tris = np.frombuffer(
        data,
        dtype=np.dtype(
            [("normal", "<3f4"), ("v", "<(3,3)f4"), ("attr", "<u2")], align=False
        ),
        count=count,
        offset=_STL_HEADER + 4,
    )
    flat = tris["v"].reshape(-1, 3).astype(np.float64)
    return _index_triangle_soup(flat)


def _parse_ascii_stl(data: bytes) -> TriMesh:
    try:
        text = data.decode("utf-8", errors="replace")
    except Exception as exc:  # pragma: no cover - decode never raises with replace
        raise MalformedFile(f"undecodable ASCII STL: {exc}")
    coords: list[list[float]] = []
    for line in text.splitlines():
        parts = line.split()
        if parts[:1] == ["vertex"]:
            if len(parts) != 4:
                raise MalformedFile(f"bad vertex line: {line.strip()!r}")
            try:
                coords.append([float(x) for x in parts[1:]])
            except ValueError:
                raise MalformedFile(f"non-numeric vertex: {line.strip()!r}")
    if not coords or len(coords) % 3 != 0:
        raise MalformedFile(f"ASCII STL holds {len(coords)} vertices (not a multiple of 3)")
    return _index_triangle_soup(np.asarray(coords, dtype=np.float64))


def _index_triangle_soup(flat_vertices: np.ndarray) -> TriMesh:
    if np.isnan(flat_vertices).any():
        raise MalformedFile("mesh contains NaN coordinates")
    unique, inverse = np.unique(flat_vertices, axis=0, return_inverse=True)
    triangles = np.asarray(inverse).reshape(-1, 3)
    return TriMesh(vertices=unique, triangles=triangles)


def write_stl(mesh: TriMesh, header_note: bytes = b"") -> bytes:
    """Serialize a mesh as binary STL (deterministic, zero attributes)."""
    out = io.BytesIO()
    header = (header_note or b"").ljust(_STL_HEADER, b"\0")[:_STL_HEADER]
    out.write(header)
    out.write(struct.pack("<I", mesh.n_triangles))
    v = mesh.vertices
    for tri in mesh.triangles:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        n = n / norm if norm > 0 else np.zeros(3)
        out.write(struct.pack("<3f", *n.astype(np.float32)))
        for p in (a, b, c):
            out.write(struct.pack("<3f", *p.astype(np.float32)))
        out.write(struct.pack("<H", 0))
    return out.getvalue()


# --- sampling and distance -------------------------------------------------

def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Draw n surface points, triangle choice proportional to area.

    Zero-area triangles keep their place in the mesh but never receive
    samples. Raises ZeroArea when no triangle has positive area.
    """
    if n <= 0:
        raise ValueError("sample count must be positive")
    areas = mesh.triangle_areas()
    total = float(areas.sum())
    if not len(areas) or total <= 0.0:
        raise ZeroArea("mesh has no positive surface area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    a = mesh.vertices[mesh.triangles[idx, 0]]
    b = mesh.vertices[mesh.triangles[idx, 1]]
    c = mesh.vertices[mesh.triangles[idx, 2]]
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    points = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(points=points, seed=seed, source_mesh_hash=mesh.digest())


def normalize_pair(
    gt: PointCloud, cand: PointCloud
) -> tuple[PointCloud, PointCloud, NormalizationTransform]:
    """Apply the reference-anchored normalization to both clouds."""
    if not len(gt):
        raise DegenerateExtent("reference cloud is empty")
    lo = gt.points.min(axis=0)
    hi = gt.points.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateExtent("reference cloud has zero max extent")
    center = (lo + hi) / 2.0
    transform = NormalizationTransform(center=tuple(center.tolist()), scale=extent)
    gt_n = PointCloud(transform.apply(gt.points), gt.seed, gt.source_mesh_hash)
    cand_n = PointCloud(transform.apply(cand.points), cand.seed, cand.source_mesh_hash)
    return gt_n, cand_n, transform


def chamfer(
    a: PointCloud, b: PointCloud, normalization: NormalizationTransform | None = None
) -> ChamferResult:
    """Sum of directional means of squared nearest-neighbor distances."""
    if not len(a) or not len(b):
        raise ValueError("chamfer requires two non-empty clouds")
    d_ab, _ = cKDTree(b.points).query(a.points, k=1)
    d_ba, _ = cKDTree(a.points).query(b.points, k=1)
    value = float(np.mean(d_ab**2) + np.mean(d_ba**2))
    return ChamferResult(value=value, n_points=len(a), normalization=normalization)


def mesh_chamfer(
    gt_mesh: TriMesh, cand_mesh: TriMesh, n: int = DEFAULT_SAMPLE_COUNT, seed: int = 0
) -> ChamferResult:
    """Sample both meshes, normalize on the reference, and measure CD.

    Both clouds use the same seed: identical geometry yields identical
    clouds and therefore CD exactly 0.
    """
    gt_cloud = sample_surface(gt_mesh, n, seed)
    cand_cloud = sample_surface(cand_mesh, n, seed)
    gt_n, cand_n, transform = normalize_pair(gt_cloud, cand_cloud)
    return chamfer(gt_n, cand_n, normalization=transform)


# --- validity and aggregates ------------------------------------------------

_STATUS_FAILURES = {
    "execution_error": "ExecutionError",
    "timeout": "Timeout",
    "no_result": "NoResultVariable",
    "empty": "EmptyGeometry",
}


def classify_validity(status: str, mesh: TriMesh | None) -> ValidityVerdict:
    """Map an executor outcome to a validity verdict."""
    if status == "ok":
        if mesh is None or mesh.n_triangles == 0:
            return ValidityVerdict(valid=False, failure_kind="EmptyGeometry")
        return ValidityVerdict(valid=True)
    kind = _STATUS_FAILURES.get(status, "ExecutionError")
    return ValidityVerdict(valid=False, failure_kind=kind)


@dataclass(frozen=True)
class GeometryReport:
    n: int
    n_invalid: int
    ir_percent: float
    mean_cd_e3: float | None
    median_cd_e3: float | None

    def to_json(self) -> dict:
        return {
            "ir_percent": self.ir_percent,
            "mean_cd_e3": self.mean_cd_e3,
            "median_cd_e3": self.median_cd_e3,
            "n": self.n,
            "n_invalid": self.n_invalid,
        }


def aggregate(results: list[tuple[ChamferResult | None, ValidityVerdict]]) -> GeometryReport:
    """IR over everything; mean/median CD over valid samples only, ×1e3."""
    if not results:
        raise ValueError("aggregate requires at least one result")
    n = len(results)
    n_invalid = sum(1 for _, verdict in results if not verdict.valid)
    cds = [cr.value for cr, verdict in results if verdict.valid and cr is not None]
    mean_cd = float(np.mean(cds)) * REPORT_SCALE if cds else None
    median_cd = statistics.median(cds) * REPORT_SCALE if cds else None
    return GeometryReport(
        n=n,
        n_invalid=n_invalid,
        ir_percent=100.0 * n_invalid / n,
        mean_cd_e3=mean_cd,
        median_cd_e3=median_cd,
    )


CENSUS_THRESHOLDS_E3 = (0.1, 0.2, 0.5, 1, 2)


def cd_census(cd_values: list[float], thresholds_e3=CENSUS_THRESHOLDS_E3) -> list[dict]:
    """Cumulative fraction of samples below each CD threshold (×1e3 units)."""
    rows = []
    total = len(cd_values)
    for t in thresholds_e3:
        below = sum(1 for v in cd_values if v * REPORT_SCALE < t)
        pct = 100.0 * below / total if total else 0.0
        rows.append({"threshold_e3": t, "percent_below": pct})
    return rows


def render_census(rows: list[dict]) -> str:
    """Fixed-width census table; one row per threshold."""
    lines = ["CD (x10^3)  Percentage"]
    for row in rows:
        t = row["threshold_e3"]
        t_text = f"{t:g}"
        lines.append(f"{t_text:<12}{row['percent_below']:.2f}%")
    return "\n".join(lines) + "\n"
