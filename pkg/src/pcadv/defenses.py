"""Input-restoration defenses: statistical outlier removal and salient-point
removal, plus the dispatch glue for the evaluation harness.

Both restorations are strict filters. They never move points: every surviving
point is bit-identical to its input counterpart, only membership changes.
Adversarial training is the third defense but lives in the training loop
(network.TrainConfig.adversarial_epsilon); at evaluation time it just selects
which checkpoint answers, so apply_defense treats it as identity.

The defender never sees the clean cloud, so outlier statistics are computed
on the (possibly adversarial) input itself, in a single pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pcadv.geometry import PointCloud, neighbor_stats
from pcadv.network import PointNetModel, logit_jacobians

DEFENSE_METHODS = ("none", "adversarial_training", "remove_outliers", "remove_salient")


@dataclass
class DefenseConfig:
    """Which defense to run and its knobs.

    salient_count=None scales with cloud size as ceil(N / 10), mirroring the
    roughly 10% removal rate of the reference setup (100 of 1024 points).
    """

    method: str = "none"
    k: int = 10
    stddev_epsilon: float = 1.0
    salient_count: Optional[int] = None
    adv_train_epsilon: float = 1.0

    def __post_init__(self):
        if self.method not in DEFENSE_METHODS:
            raise ValueError(f"unknown defense method {self.method!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.stddev_epsilon < 0:
            raise ValueError("stddev_epsilon must be nonnegative")
        if self.salient_count is not None and self.salient_count < 0:
            raise ValueError("salient_count must be nonnegative")
        if self.adv_train_epsilon < 0:
            raise ValueError("adv_train_epsilon must be nonnegative")


@dataclass
class RestoredCloud:
    """A filtered cloud plus the bookkeeping of what was dropped."""

    points: np.ndarray
    removed_indices: np.ndarray  # strictly increasing indices into the input
    label: Optional[int] = None

    def __post_init__(self):
        self.removed_indices = np.asarray(self.removed_indices, dtype=np.int64)
        if self.removed_indices.size > 1:
            if not np.all(np.diff(self.removed_indices) > 0):
                raise ValueError("removed_indices must be strictly increasing")


def default_salient_count(n: int) -> int:
    return math.ceil(n / 10)


def remove_outliers(
    cloud: PointCloud, k: int = 10, stddev_epsilon: float = 1.0
) -> RestoredCloud:
    """Drop points whose mean k-NN distance strictly exceeds the population
    mean by more than stddev_epsilon standard deviations.

    Statistics come from one pass over the input cloud; removal does not
    trigger recomputation. The minimum-distance point can never exceed the
    mean, so with stddev_epsilon >= 0 at least one point always survives.
    """
    stats = neighbor_stats(cloud, k)
    threshold = stats.mean + stddev_epsilon * stats.stddev
    outliers = stats.per_point_mean_dist > threshold
    if outliers.all():
        raise ValueError("outlier removal would discard every point")
    removed = np.flatnonzero(outliers)
    return RestoredCloud(
        points=cloud.points[~outliers], removed_indices=removed, label=cloud.label
    )


def remove_salient(
    model: PointNetModel, cloud: PointCloud, salient_count: int
) -> RestoredCloud:
    """Drop the salient_count points with the largest per-class gradient.

    Saliency of a point is the max over classes of the L2 norm of that
    logit's gradient at the point, scored once on the input cloud. Saliency
    ties resolve by removing the higher index first, so lower-index points
    are preferentially retained.
    """
    if not 0 <= salient_count < len(cloud):
        raise ValueError(
            f"salient_count {salient_count} out of range for {len(cloud)} points"
        )
    if salient_count == 0:
        return RestoredCloud(
            points=cloud.points.copy(),
            removed_indices=np.empty(0, dtype=np.int64),
            label=cloud.label,
        )
    jacobians = logit_jacobians(model, cloud)
    saliency = np.linalg.norm(jacobians, axis=2).max(axis=0)
    # primary key: saliency descending; tie key: index descending
    order = np.lexsort((-np.arange(len(cloud)), -saliency))
    removed = np.sort(order[:salient_count])
    keep = np.ones(len(cloud), dtype=bool)
    keep[removed] = False
    return RestoredCloud(
        points=cloud.points[keep], removed_indices=removed, label=cloud.label
    )


def apply_defense(
    model: PointNetModel, cloud: PointCloud, defense: DefenseConfig
) -> PointCloud:
    """Run the configured restoration and return a cloud ready to classify.

    Point provenance survives filtering. Training-time defenses (none,
    adversarial_training) pass the cloud through untouched; for the latter
    the caller is responsible for evaluating the matching checkpoint.
    """
    if defense.method in ("none", "adversarial_training"):
        return cloud
    if defense.method == "remove_outliers":
        restored = remove_outliers(cloud, defense.k, defense.stddev_epsilon)
    else:
        count = defense.salient_count
        if count is None:
            count = default_salient_count(len(cloud))
        restored = remove_salient(model, cloud, count)
    keep = np.ones(len(cloud), dtype=bool)
    keep[restored.removed_indices] = False
    provenance = None
    if cloud.source_triangles is not None:
        provenance = cloud.source_triangles[keep]
    return PointCloud(restored.points, label=cloud.label, source_triangles=provenance)
