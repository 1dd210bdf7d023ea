import numpy as np
import pytest

from helpers import brute_force_knn_means, fd_logit_jacobians
from pcadv import network as net
from pcadv.defenses import (
    DefenseConfig,
    RestoredCloud,
    apply_defense,
    default_salient_count,
    remove_outliers,
    remove_salient,
)
from pcadv.geometry import PointCloud


def small_model(seed=0, class_count=3):
    return net.init_model(class_count, point_widths=(4, 5), head_widths=(4,), seed=seed)


def ball_with_outlier(seed=0, n=100, outlier_distance=10.0):
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = rng.random(n) ** (1.0 / 3.0)
    points = directions * radii[:, None]
    points = np.vstack([points, [outlier_distance, 0.0, 0.0]])
    return PointCloud(points, label=0)


class TestDefenseConfig:
    def test_defaults_match_reference_setup(self):
        config = DefenseConfig()
        assert config.method == "none"
        assert config.k == 10
        assert config.stddev_epsilon == 1.0
        assert config.salient_count is None
        assert config.adv_train_epsilon == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            DefenseConfig(method="firewall")
        with pytest.raises(ValueError):
            DefenseConfig(k=0)
        with pytest.raises(ValueError):
            DefenseConfig(stddev_epsilon=-0.5)
        with pytest.raises(ValueError):
            DefenseConfig(salient_count=-1)
        with pytest.raises(ValueError):
            DefenseConfig(adv_train_epsilon=-1.0)


class TestRestoredCloud:
    def test_rejects_unsorted_removed_indices(self):
        with pytest.raises(ValueError):
            RestoredCloud(np.zeros((3, 3)), np.array([4, 2]))
        with pytest.raises(ValueError):
            RestoredCloud(np.zeros((3, 3)), np.array([2, 2]))


class TestRemoveOutliers:
    def test_regular_tetrahedron_keeps_everything(self):
        verts = np.array(
            [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
        )
        cloud = PointCloud(verts, label=2)
        for eps in (0.0, 1.0, 5.0):
            restored = remove_outliers(cloud, k=3, stddev_epsilon=eps)
            assert restored.removed_indices.size == 0
            assert np.array_equal(restored.points, verts)
            assert restored.label == 2

    def test_single_far_point_removed(self):
        cloud = ball_with_outlier(seed=1)
        restored = remove_outliers(cloud, k=10, stddev_epsilon=1.0)
        assert restored.removed_indices.tolist() == [100]
        assert len(restored.points) == 100

    def test_decision_matches_brute_force_oracle(self):
        cloud = ball_with_outlier(seed=2, n=40, outlier_distance=6.0)
        k, eps = 5, 1.0
        means = brute_force_knn_means(cloud.points, k)
        threshold = means.mean() + eps * means.std()
        expected = np.flatnonzero(means > threshold)
        restored = remove_outliers(cloud, k=k, stddev_epsilon=eps)
        assert np.array_equal(restored.removed_indices, expected)

    def test_strict_filter_and_count_bookkeeping(self):
        cloud = ball_with_outlier(seed=3, n=60)
        restored = remove_outliers(cloud, k=10, stddev_epsilon=0.5)
        assert len(restored.points) + restored.removed_indices.size == len(cloud)
        keep = np.ones(len(cloud), dtype=bool)
        keep[restored.removed_indices] = False
        assert np.array_equal(restored.points, cloud.points[keep])

    def test_permutation_equivariant(self):
        cloud = ball_with_outlier(seed=4, n=50)
        base_removed = set(remove_outliers(cloud, k=7).removed_indices.tolist())
        rng = np.random.default_rng(5)
        perm = rng.permutation(len(cloud))
        permuted = PointCloud(cloud.points[perm], label=cloud.label)
        permuted_removed = set(
            remove_outliers(permuted, k=7).removed_indices.tolist()
        )
        expected = {int(np.flatnonzero(perm == i)[0]) for i in base_removed}
        assert permuted_removed == expected

    def test_huge_stddev_epsilon_removes_nothing(self):
        cloud = ball_with_outlier(seed=6)
        restored = remove_outliers(cloud, k=10, stddev_epsilon=1e18)
        assert restored.removed_indices.size == 0

    def test_discard_everything_guarded(self):
        # only reachable with a negative multiplier, which DefenseConfig
        # forbids; the raw op still refuses to return an empty cloud
        cloud = ball_with_outlier(seed=7, n=30)
        with pytest.raises(ValueError):
            remove_outliers(cloud, k=5, stddev_epsilon=-1e9)

    def test_bad_k_rejected(self):
        cloud = PointCloud(np.random.default_rng(8).normal(size=(5, 3)))
        with pytest.raises(ValueError):
            remove_outliers(cloud, k=5)


class TestRemoveSalient:
    def test_zero_count_is_identity(self):
        model = small_model(0)
        cloud = PointCloud(np.random.default_rng(9).normal(size=(12, 3)), label=1)
        restored = remove_salient(model, cloud, 0)
        assert restored.removed_indices.size == 0
        assert np.array_equal(restored.points, cloud.points)

    @pytest.mark.parametrize("count", [1, 3, 7])
    def test_removes_exactly_count(self, count):
        model = small_model(1)
        cloud = PointCloud(np.random.default_rng(10).normal(size=(20, 3)), label=0)
        restored = remove_salient(model, cloud, count)
        assert restored.removed_indices.size == count
        assert len(restored.points) == 20 - count

    def test_matches_finite_difference_saliency_oracle(self):
        model = small_model(2)
        cloud = PointCloud(np.random.default_rng(11).normal(size=(8, 3)), label=0)
        numeric = fd_logit_jacobians(model, cloud)
        oracle_saliency = np.linalg.norm(numeric, axis=2).max(axis=0)
        count = 2
        expected = set(np.argsort(-oracle_saliency)[:count].tolist())
        restored = remove_salient(model, cloud, count)
        assert set(restored.removed_indices.tolist()) == expected

    def test_tie_retains_lower_index(self):
        # identity layers make saliency exactly 1 for both points by symmetry
        model = net.PointNetModel(
            [(np.eye(3), np.zeros(3))],
            [(np.eye(3), np.zeros(3))],
            3,
        )
        cloud = PointCloud(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), label=0)
        jac = net.logit_jacobians(model, cloud)
        saliency = np.linalg.norm(jac, axis=2).max(axis=0)
        assert saliency[0] == saliency[1] > 0.0
        restored = remove_salient(model, cloud, 1)
        assert restored.removed_indices.tolist() == [1]

    def test_surviving_points_bit_identical(self):
        model = small_model(3)
        cloud = PointCloud(np.random.default_rng(12).normal(size=(15, 3)), label=2)
        restored = remove_salient(model, cloud, 4)
        keep = np.ones(15, dtype=bool)
        keep[restored.removed_indices] = False
        assert np.array_equal(restored.points, cloud.points[keep])

    def test_deterministic(self):
        model = small_model(4)
        cloud = PointCloud(np.random.default_rng(13).normal(size=(15, 3)), label=0)
        a = remove_salient(model, cloud, 5)
        b = remove_salient(model, cloud, 5)
        assert np.array_equal(a.removed_indices, b.removed_indices)
        assert np.array_equal(a.points, b.points)

    def test_count_bounds(self):
        model = small_model(5)
        cloud = PointCloud(np.random.default_rng(14).normal(size=(6, 3)))
        with pytest.raises(ValueError):
            remove_salient(model, cloud, 6)
        with pytest.raises(ValueError):
            remove_salient(model, cloud, -1)


class TestApplyDefense:
    def test_none_and_adversarial_training_are_identity(self):
        model = small_model(6)
        cloud = PointCloud(np.random.default_rng(15).normal(size=(10, 3)), label=1)
        assert apply_defense(model, cloud, DefenseConfig()) is cloud
        assert (
            apply_defense(model, cloud, DefenseConfig(method="adversarial_training"))
            is cloud
        )

    def test_outlier_path_filters_provenance(self):
        base = ball_with_outlier(seed=16, n=30)
        provenance = np.arange(31, dtype=np.int64)
        cloud = PointCloud(base.points, label=3, source_triangles=provenance)
        model = small_model(7)
        out = apply_defense(
            model, cloud, DefenseConfig(method="remove_outliers", k=5)
        )
        restored = remove_outliers(cloud, k=5, stddev_epsilon=1.0)
        assert np.array_equal(out.points, restored.points)
        assert out.label == 3
        keep = np.ones(31, dtype=bool)
        keep[restored.removed_indices] = False
        assert np.array_equal(out.source_triangles, provenance[keep])

    def test_salient_path_uses_scaled_default_count(self):
        model = small_model(8)
        cloud = PointCloud(np.random.default_rng(17).normal(size=(25, 3)), label=0)
        out = apply_defense(model, cloud, DefenseConfig(method="remove_salient"))
        assert len(out) == 25 - default_salient_count(25)

    def test_salient_path_honors_explicit_count(self):
        model = small_model(9)
        cloud = PointCloud(np.random.default_rng(18).normal(size=(25, 3)), label=0)
        out = apply_defense(
            model, cloud, DefenseConfig(method="remove_salient", salient_count=3)
        )
        assert len(out) == 22

    def test_defended_cloud_still_classifies(self):
        model = small_model(10)
        cloud = PointCloud(np.random.default_rng(19).normal(size=(25, 3)), label=0)
        out = apply_defense(
            model, cloud, DefenseConfig(method="remove_salient", salient_count=5)
        )
        cls, confidence = net.predict(model, out)
        assert 0 <= cls < 3
        assert 0.0 < confidence <= 1.0


class TestDefaultSalientCount:
    def test_scaling(self):
        assert default_salient_count(1024) == 103
        assert default_salient_count(1000) == 100
        assert default_salient_count(256) == 26
        assert default_salient_count(10) == 1
        assert default_salient_count(9) == 1
