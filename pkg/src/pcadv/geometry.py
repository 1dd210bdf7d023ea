"""Meshes, point clouds, and the geometric primitives used by attacks and defenses.

Everything here is pure and deterministic: meshes and clouds are plain
dataclasses over numpy arrays, and every operation returns new arrays.
Distances are Euclidean, kNN is brute force (the O(N^2) reference that any
accelerated variant must match exactly), and triangle projection returns the
closest point on the closed triangle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


class OffParseError(ValueError):
    """Raised for malformed OFF input; message carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


@dataclass
class TriangleMesh:
    """Triangle surface: (V, 3) float vertices and (T, 3) int vertex-index triples."""

    vertices: np.ndarray
    triangles: np.ndarray
    class_label: Optional[Union[int, str]] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices must be finite")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def triangle_vertices(self, index: int) -> np.ndarray:
        """The (3, 3) vertex block of one triangle."""
        return self.vertices[self.triangles[index]]


@dataclass
class PointCloud:
    """Fixed-size set of 3D points with a label and optional triangle provenance."""

    points: np.ndarray
    label: Optional[Union[int, str]] = None
    source_triangles: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("cloud points must be finite")
        if self.source_triangles is not None:
            self.source_triangles = np.asarray(self.source_triangles, dtype=np.int64)
            if self.source_triangles.shape != (len(self.points),):
                raise ValueError("source_triangles must have one entry per point")

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """Same label/provenance, new coordinates."""
        return PointCloud(points, label=self.label, source_triangles=self.source_triangles)


@dataclass
class NeighborStats:
    """Per-point mean distance to the k nearest other points, plus distribution stats."""

    k: int
    per_point_mean_dist: np.ndarray
    mean: float
    stddev: float


@dataclass
class CloudTransform:
    """Translation + uniform scale mapping source coordinates into cloud coordinates.

    Recorded by :func:`normalize` so the originating mesh can be mapped into
    the same frame as its sampled cloud (needed to project perturbed points
    back onto the surface).
    """

    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) / self.scale

    def apply_mesh(self, mesh: TriangleMesh) -> TriangleMesh:
        return TriangleMesh(
            self.apply_points(mesh.vertices), mesh.triangles.copy(), mesh.class_label
        )


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Areas of all triangles, via the cross-product formula."""
    tri = vertices[triangles]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def load_off(source: Union[str, IO[str]], class_label=None) -> TriangleMesh:
    """Parse an OFF mesh from a string or text stream.

    Accepts both the standard header ("OFF" alone on the first line) and the
    ModelNet quirk where the counts are glued onto the header line
    ("OFF3 1 0"). Faces must be triangles. Zero-area triangles are dropped
    (with a logged count) so downstream area-weighted sampling is well posed.
    """
    text = source if isinstance(source, str) else source.read()
    lines = []  # (1-based line number, stripped content), blanks/comments skipped
    for i, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped and not stripped.startswith("#"):
            lines.append((i, stripped))
    if not lines:
        raise OffParseError(1, "empty file")

    header_no, header = lines[0]
    if header == "OFF":
        if len(lines) < 2:
            raise OffParseError(header_no, "missing vertex/face counts")
        counts_no, counts_line = lines[1]
        body = lines[2:]
    elif header.startswith("OFF"):
        counts_no, counts_line = header_no, header[3:].strip()
        body = lines[1:]
    else:
        raise OffParseError(header_no, "missing OFF header")

    tokens = counts_line.split()
    if len(tokens) < 2:
        raise OffParseError(counts_no, f"expected vertex/face counts, got {counts_line!r}")
    try:
        n_vertices, n_faces = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise OffParseError(counts_no, f"non-numeric count in {counts_line!r}") from None

    if len(body) < n_vertices + n_faces:
        last = body[-1][0] if body else counts_no
        raise OffParseError(last, "unexpected end of file")

    vertices = np.empty((n_vertices, 3))
    for row, (line_no, line) in enumerate(body[:n_vertices]):
        parts = line.split()
        if len(parts) != 3:
            raise OffParseError(line_no, f"expected 3 vertex coordinates, got {len(parts)}")
        try:
            vertices[row] = [float(p) for p in parts]
        except ValueError:
            raise OffParseError(line_no, f"non-numeric vertex token in {line!r}") from None

    triangles = np.empty((n_faces, 3), dtype=np.int64)
    for row, (line_no, line) in enumerate(body[n_vertices : n_vertices + n_faces]):
        parts = line.split()
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise OffParseError(line_no, f"non-numeric face token in {line!r}") from None
        if len(values) != 4 or values[0] != 3:
            raise OffParseError(line_no, "only triangle faces are supported")
        if min(values[1:]) < 0 or max(values[1:]) >= n_vertices:
            raise OffParseError(line_no, f"vertex index out of range in {line!r}")
        triangles[row] = values[1:]

    if n_faces:
        keep = triangle_areas(vertices, triangles) > 0.0
        dropped = int(n_faces - keep.sum())
        if dropped:
            logger.info("dropped %d degenerate triangle(s) while loading mesh", dropped)
        triangles = triangles[keep]
    return TriangleMesh(vertices, triangles, class_label)


def sample_surface(mesh: TriangleMesh, n: int, seed) -> PointCloud:
    """Draw n points uniformly over the mesh surface.

    Triangles are chosen proportionally to area, then a point is placed
    uniformly inside each via folded barycentric coordinates. Provenance
    (which triangle produced each point) is kept on the cloud.
    """
    if mesh.triangle_count == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    chosen = rng.choice(len(areas), size=n, p=areas / areas.sum())

    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0  # fold the unit square onto the lower-left triangle
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]

    tri = mesh.vertices[mesh.triangles[chosen]]
    points = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(points, label=mesh.class_label, source_triangles=chosen)


def normalize(cloud: PointCloud) -> tuple[PointCloud, CloudTransform]:
    """Center the cloud on its centroid and scale the farthest point to norm 1.

    Returns the normalized cloud together with the applied transform so other
    geometry (e.g. the source mesh) can be mapped into the same frame.
    """
    if len(cloud) == 0:
        raise ValueError("cannot normalize an empty cloud")
    centroid = cloud.points.mean(axis=0)
    centered = cloud.points - centroid
    scale = float(np.linalg.norm(centered, axis=1).max())
    if scale == 0.0:
        raise ValueError("all points coincide; scale is undefined")
    transform = CloudTransform(offset=centroid, scale=scale)
    return cloud.with_points(centered / scale), transform


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Dense (N, N) Euclidean distance matrix with +inf on the diagonal."""
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    return dist


def neighbor_stats(cloud: PointCloud, k: int) -> NeighborStats:
    """Mean distance from each point to its k nearest other points.

    Self-distances are excluded; distance ties are broken by lower point
    index. The summary stddev is the population standard deviation.
    """
    n = len(cloud)
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    dist = _pairwise_distances(cloud.points)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    per_point = np.take_along_axis(dist, order, axis=1).mean(axis=1)
    return NeighborStats(
        k=k,
        per_point_mean_dist=per_point,
        mean=float(per_point.mean()),
        stddev=float(per_point.std()),
    )


def mean_nn_distance(cloud: PointCloud) -> float:
    """Mean over all points of the distance to each point's single nearest neighbor."""
    if len(cloud) < 2:
        raise ValueError("need at least 2 points")
    return float(_pairwise_distances(cloud.points).min(axis=1).mean())


def barycentric_coordinates(point: np.ndarray, triangle: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (u, v, w) of the in-plane projection of `point`."""
    a, b, c = np.asarray(triangle, dtype=np.float64)
    v0, v1, v2 = b - a, c - a, np.asarray(point, dtype=np.float64) - a
    d00 = v0 @ v0
    d01 = v0 @ v1
    d11 = v1 @ v1
    d20 = v2 @ v0
    d21 = v2 @ v1
    denom = d00 * d11 - d01 * d01
    if denom == 0.0:
        raise ValueError("degenerate triangle")
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    return np.array([1.0 - v - w, v, w])


def _closest_point_on_segment(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = float(np.clip((point - a) @ ab / (ab @ ab), 0.0, 1.0))
    return a + t * ab


def project_to_triangle(point: np.ndarray, triangle: np.ndarray) -> np.ndarray:
    """Closest point of the closed triangle to `point`.

    First drops the point onto the triangle's plane along the unit normal; if
    that projection falls outside the triangle it is clipped to the nearest
    point on the triangle's edges. (Clipping the planar projection and
    clipping the original point agree: the normal component is orthogonal to
    every in-plane offset.)
    """
    point = np.asarray(point, dtype=np.float64)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    normal = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    norm = np.linalg.norm(normal)
    if norm == 0.0:
        raise ValueError("degenerate triangle")
    unit = normal / norm
    projected = point - unit * (unit @ (point - tri[0]))

    if np.all(barycentric_coordinates(projected, tri) >= -1e-12):
        return projected
    candidates = [
        _closest_point_on_segment(projected, tri[i], tri[(i + 1) % 3]) for i in range(3)
    ]
    distances = [np.linalg.norm(projected - c) for c in candidates]
    return candidates[int(np.argmin(distances))]


def write_ply(path, points: np.ndarray, perturbed: Optional[Sequence[int]] = None) -> None:
    """Write an ascii PLY cloud with a per-vertex integer `perturbed` flag (0/1)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if perturbed is None:
        perturbed = np.zeros(len(points), dtype=np.int64)
    flags = np.asarray(perturbed, dtype=np.int64)
    if flags.shape != (len(points),):
        raise ValueError("perturbed flags must have one entry per point")
    with open(path, "w", encoding="ascii") as handle:
        handle.write("ply\nformat ascii 1.0\n")
        handle.write(f"element vertex {len(points)}\n")
        handle.write("property double x\nproperty double y\nproperty double z\n")
        handle.write("property int perturbed\nend_header\n")
        for (x, y, z), flag in zip(points, flags):
            handle.write(f"{float(x)!r} {float(y)!r} {float(z)!r} {int(flag)}\n")
