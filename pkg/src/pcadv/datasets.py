"""Dataset construction: synthetic parametric shapes and OFF-directory loading.

The synthetic set is a stand-in for a hand-picked "visually distinct" mesh
benchmark: eight parametric solids, each instanced with per-axis scale jitter
and a random rotation about the vertical axis, then surface-sampled and
normalized. Per-axis jitter matters: a uniform scale factor would be erased
by unit-sphere normalization, leaving every instance of a class identical up
to rotation.

Every sample keeps its generating mesh, co-transformed into the normalized
cloud's coordinates, so mesh-projection attacks can run downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from pcadv.geometry import PointCloud, TriangleMesh, load_off, normalize, sample_surface


def _sphere():
    return _lat_long_shell(rings=9, segments=12, shift=0.0)


def _capsule():
    # a sphere whose hemispheres are pulled apart along z; the odd ring count
    # keeps vertices off the equator so exactly one band becomes the wall
    return _lat_long_shell(rings=9, segments=12, shift=0.5)


def _lat_long_shell(rings, segments, shift):
    vertices = [[0.0, 0.0, 1.0 + shift]]
    for i in range(1, rings):
        theta = math.pi * i / rings
        z = math.cos(theta)
        r = math.sin(theta)
        dz = shift if z > 0 else -shift
        for j in range(segments):
            phi = 2.0 * math.pi * j / segments
            vertices.append([r * math.cos(phi), r * math.sin(phi), z + dz])
    vertices.append([0.0, 0.0, -1.0 - shift])
    last = len(vertices) - 1

    def ring_start(i):
        return 1 + (i - 1) * segments

    triangles = []
    for j in range(segments):
        triangles.append([0, ring_start(1) + j, ring_start(1) + (j + 1) % segments])
    for i in range(1, rings - 1):
        a, b = ring_start(i), ring_start(i + 1)
        for j in range(segments):
            jn = (j + 1) % segments
            triangles.append([a + j, b + j, b + jn])
            triangles.append([a + j, b + jn, a + jn])
    for j in range(segments):
        a = ring_start(rings - 1)
        triangles.append([last, a + (j + 1) % segments, a + j])
    return np.array(vertices), np.array(triangles)


def _box():
    corners = np.array(
        [
            [-0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5],
            [0.5, 0.5, -0.5],
            [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.5, 0.5, 0.5],
            [-0.5, 0.5, 0.5],
        ]
    )
    triangles = np.array(
        [
            [0, 1, 2], [0, 2, 3],  # bottom
            [4, 6, 5], [4, 7, 6],  # top
            [0, 4, 5], [0, 5, 1],
            [1, 5, 6], [1, 6, 2],
            [2, 6, 7], [2, 7, 3],
            [3, 7, 4], [3, 4, 0],
        ]
    )
    return corners, triangles


def _circle_ring(radius, z, segments):
    return [
        [radius * math.cos(2.0 * math.pi * j / segments),
         radius * math.sin(2.0 * math.pi * j / segments),
         z]
        for j in range(segments)
    ]


def _cylinder(segments=16):
    top = _circle_ring(0.5, 0.8, segments)
    bottom = _circle_ring(0.5, -0.8, segments)
    vertices = top + bottom + [[0.0, 0.0, 0.8], [0.0, 0.0, -0.8]]
    tc, bc = 2 * segments, 2 * segments + 1
    triangles = []
    for j in range(segments):
        jn = (j + 1) % segments
        triangles.append([j, segments + j, segments + jn])
        triangles.append([j, segments + jn, jn])
        triangles.append([tc, j, jn])
        triangles.append([bc, segments + jn, segments + j])
    return np.array(vertices), np.array(triangles)


def _cone(segments=16):
    base = _circle_ring(0.7, -0.7, segments)
    vertices = base + [[0.0, 0.0, 0.7], [0.0, 0.0, -0.7]]
    apex, center = segments, segments + 1
    triangles = []
    for j in range(segments):
        jn = (j + 1) % segments
        triangles.append([apex, j, jn])
        triangles.append([center, jn, j])
    return np.array(vertices), np.array(triangles)


def _torus(major=0.7, minor=0.28, major_segments=14, minor_segments=8):
    vertices = []
    for i in range(major_segments):
        phi = 2.0 * math.pi * i / major_segments
        for j in range(minor_segments):
            psi = 2.0 * math.pi * j / minor_segments
            r = major + minor * math.cos(psi)
            vertices.append([r * math.cos(phi), r * math.sin(phi), minor * math.sin(psi)])
    triangles = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a = i * minor_segments + j
            b = ((i + 1) % major_segments) * minor_segments + j
            an = i * minor_segments + (j + 1) % minor_segments
            bn = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            triangles.append([a, b, bn])
            triangles.append([a, bn, an])
    return np.array(vertices), np.array(triangles)


def _pyramid():
    vertices = np.array(
        [
            [-0.6, -0.6, -0.5],
            [0.6, -0.6, -0.5],
            [0.6, 0.6, -0.5],
            [-0.6, 0.6, -0.5],
            [0.0, 0.0, 0.7],
        ]
    )
    triangles = np.array(
        [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4], [0, 2, 1], [0, 3, 2]]
    )
    return vertices, triangles


def _grid(divisions=6, extent=0.75):
    coords = np.linspace(-extent, extent, divisions + 1)
    vertices = [[x, y, 0.0] for y in coords for x in coords]
    triangles = []
    stride = divisions + 1
    for i in range(divisions):
        for j in range(divisions):
            a = i * stride + j
            triangles.append([a, a + 1, a + stride + 1])
            triangles.append([a, a + stride + 1, a + stride])
    return np.array(vertices), np.array(triangles)


GENERATORS = {
    "sphere": _sphere,
    "box": _box,
    "cylinder": _cylinder,
    "cone": _cone,
    "torus": _torus,
    "pyramid": _pyramid,
    "capsule": _capsule,
    "grid": _grid,
}

DEFAULT_CLASSES = tuple(GENERATORS)


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    classes: tuple = DEFAULT_CLASSES
    samples_per_class: int = 50
    points_per_cloud: int = 1024
    seed: int = 0
    train_split: float = 0.8
    off_root: Optional[str] = None  # directory of <class>/<mesh>.off, off_directory source

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if self.source not in ("synthetic", "off_directory"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        if not 0.0 < self.train_split < 1.0:
            raise ValueError("train_split must lie strictly between 0 and 1")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if self.points_per_cloud < 2:
            raise ValueError("points_per_cloud must be at least 2")
        if self.source == "synthetic":
            unknown = [c for c in self.classes if c not in GENERATORS]
            if unknown:
                raise ValueError(
                    f"unknown synthetic classes {unknown}; "
                    f"available: {', '.join(GENERATORS)}"
                )


@dataclass
class Sample:
    """One labeled cloud plus its generating mesh in cloud coordinates."""

    cloud: PointCloud
    mesh: TriangleMesh
    class_name: str


@dataclass
class Dataset:
    train: list
    test: list
    class_names: tuple

    @property
    def train_clouds(self):
        return [sample.cloud for sample in self.train]

    @property
    def test_clouds(self):
        return [sample.cloud for sample in self.test]


def _rotation_about_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _instance_sample(vertices, triangles, label, class_name, n_points, rng):
    scale = rng.uniform(0.8, 1.2, size=3)
    rotation = _rotation_about_z(rng.uniform(0.0, 2.0 * math.pi))
    placed = (vertices * scale) @ rotation.T
    mesh = TriangleMesh(placed, triangles, class_label=label)
    cloud = sample_surface(mesh, n_points, seed=int(rng.integers(0, 2**32)))
    cloud, transform = normalize(cloud)
    return Sample(cloud=cloud, mesh=transform.apply_mesh(mesh), class_name=class_name)


def generate_synthetic_dataset(spec: DatasetSpec) -> Dataset:
    """Deterministic per seed: one master stream, consumed in a fixed order
    (class major, sample minor). The first round(samples * split) instances
    of each class land in train, the rest in test."""
    if spec.source != "synthetic":
        raise ValueError("generate_synthetic_dataset needs a synthetic spec")
    rng = np.random.default_rng(spec.seed)
    n_train = int(round(spec.samples_per_class * spec.train_split))
    if spec.samples_per_class > 1:
        n_train = min(max(n_train, 1), spec.samples_per_class - 1)
    train, test = [], []
    for label, class_name in enumerate(spec.classes):
        vertices, triangles = GENERATORS[class_name]()
        for index in range(spec.samples_per_class):
            sample = _instance_sample(
                vertices, triangles, label, class_name, spec.points_per_cloud, rng
            )
            (train if index < n_train else test).append(sample)
    return Dataset(train=train, test=test, class_names=spec.classes)


def load_off_directory(spec: DatasetSpec) -> Dataset:
    """Ingest root/<class>/<name>.off, sampling and normalizing each mesh.

    Classes come from spec.classes, or from the sorted subdirectory names
    when the spec still carries the synthetic defaults. File order within a
    class is sorted for reproducibility; the split is per class by position.
    """
    if spec.source != "off_directory" or not spec.off_root:
        raise ValueError("load_off_directory needs source=off_directory and off_root")
    root = Path(spec.off_root)
    if not root.is_dir():
        raise ValueError(f"off_root {root} is not a directory")
    classes = spec.classes
    if classes == DEFAULT_CLASSES:
        classes = tuple(sorted(p.name for p in root.iterdir() if p.is_dir()))
    if not classes:
        raise ValueError(f"no class subdirectories under {root}")
    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    for label, class_name in enumerate(classes):
        files = sorted((root / class_name).glob("*.off"))
        if not files:
            raise ValueError(f"no .off files for class {class_name!r}")
        n_train = max(1, int(round(len(files) * spec.train_split)))
        n_train = min(n_train, max(len(files) - 1, 1))
        for index, path in enumerate(files):
            mesh = load_off(path.read_text(), class_label=label)
            cloud = sample_surface(
                mesh, spec.points_per_cloud, seed=int(rng.integers(0, 2**32))
            )
            cloud, transform = normalize(cloud)
            sample = Sample(
                cloud=cloud, mesh=transform.apply_mesh(mesh), class_name=class_name
            )
            (train if index < n_train else test).append(sample)
    return Dataset(train=train, test=test, class_names=classes)


def build_dataset(spec: DatasetSpec) -> Dataset:
    if spec.source == "synthetic":
        return generate_synthetic_dataset(spec)
    return load_off_directory(spec)
