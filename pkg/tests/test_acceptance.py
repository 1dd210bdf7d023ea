"""Acceptance gate: every criterion on the desk-scale synthetic benchmark.

One test per criterion, each printing a single PASS/FAIL line with the
measured numbers (run with -s to watch them live). Fixtures are module
scoped, so the three trainings happen once; the whole module targets a
15-minute single-core budget and empirically finishes in about four.

Scale: 8 synthetic classes, 50 train / 20 test clouds per class, 256 points
per cloud, fixed seeds everywhere.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

import pcadv.network as net
from helpers import (
    brute_force_saliency,
    fd_input_gradient,
    fd_logit_jacobians,
    fd_param_gradients,
    grid_min_distance,
    relative_error,
)
from pcadv import cli
from pcadv.attacks import AttackConfig, clip_perturbation_norms, run_attack
from pcadv.datasets import DatasetSpec, build_dataset
from pcadv.defenses import DefenseConfig, remove_outliers
from pcadv.experiments import run_matrix, transfer_eval
from pcadv.geometry import PointCloud, mean_nn_distance, project_to_triangle

DESK_SPEC = DatasetSpec(
    samples_per_class=70,  # 50 train / 20 test per class at split 5/7
    points_per_cloud=256,
    seed=11,
    train_split=5 / 7,
)
PLAIN_PLAN = ((20, 0.02), (8, 0.004))  # (epochs, learning rate) phases
ADV_PLAN = ((25, 0.02), (8, 0.004))
ADV_TRAIN_EPSILON = 2.0  # trained against steps twice the evaluated attack's

# attack configs under evaluation; iterative steps are budget-matched to the
# one-shot attack (10 x 0.1 vs 1.0) so defense/transfer orderings are about
# the attacks, not about wildly different perturbation sizes
FAST = AttackConfig("fast_l2_global", epsilon=1.0)
ITER = AttackConfig("iter_l2_global", epsilon=0.1, iterations=10)
ITER_CLIP = AttackConfig(
    "iter_l2_global", epsilon=0.1, iterations=10, postprocess="clip_norms"
)
ITER_MINIMAL = AttackConfig("iter_l2_global", epsilon=0.05, iterations=10)
JSMA = AttackConfig("jsma")


def _train_desk(dataset, init_seed, plan, adversarial_epsilon=None):
    model = net.init_model(8, seed=init_seed)
    log = []
    for epochs, lr in plan:
        config = net.TrainConfig(
            epochs=epochs,
            batch_size=16,
            learning_rate=lr,
            seed=0,
            adversarial_epsilon=adversarial_epsilon,
        )
        model, phase_log = net.train(
            model, dataset.train_clouds, config, val_clouds=dataset.test_clouds
        )
        log.extend(phase_log)
    return model, log


@pytest.fixture(scope="module")
def desk():
    """Dataset plus base / second-seed / adversarially trained models."""
    dataset = build_dataset(DESK_SPEC)
    t0 = time.perf_counter()
    model_a, log_a = _train_desk(dataset, init_seed=0, plan=PLAIN_PLAN)
    train_seconds = time.perf_counter() - t0
    model_b, _ = _train_desk(dataset, init_seed=1, plan=PLAIN_PLAN)
    adv_model, _ = _train_desk(
        dataset, init_seed=0, plan=ADV_PLAN, adversarial_epsilon=ADV_TRAIN_EPSILON
    )
    return {
        "dataset": dataset,
        "model_a": model_a,
        "model_b": model_b,
        "adv_model": adv_model,
        "train_seconds": train_seconds,
        "test_accuracy": log_a[-1].val_acc,
    }


@pytest.fixture(scope="module")
def matrix(desk):
    attacks = [
        ("none", None),
        ("fast_l2_global", FAST),
        ("iter_l2_global", ITER),
        ("iter_l2_global+clip", ITER_CLIP),
        ("jsma", JSMA),
    ]
    defenses = [
        ("none", DefenseConfig()),
        ("remove_outliers", DefenseConfig(method="remove_outliers")),
        ("adversarial_training", DefenseConfig(method="adversarial_training")),
    ]
    return run_matrix(
        desk["model_a"],
        desk["dataset"].test,
        attacks,
        defenses,
        adv_model=desk["adv_model"],
    )


def check(criterion, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    print(line)
    assert passed, line


def _cell(report, attack, defense):
    return report.error_rates[
        report.attack_names.index(attack), report.defense_names.index(defense)
    ]


def test_criterion_01_gradient_fidelity():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        model = net.init_model(4, point_widths=(6, 8), head_widths=(7,), seed=seed)
        cloud = PointCloud(rng.normal(size=(5, 3)), label=int(rng.integers(4)))
        worst = max(worst, relative_error(
            net.input_gradient(model, cloud, cloud.label),
            fd_input_gradient(model, cloud, cloud.label),
        ))
        worst = max(worst, relative_error(
            net.logit_jacobians(model, cloud), fd_logit_jacobians(model, cloud)
        ))
        grads = net.param_gradients(model, cloud, cloud.label)
        analytic = [
            arr
            for layers in (grads.point_mlp_layers, grads.head_layers)
            for pair in layers
            for arr in pair
        ]
        numeric = fd_param_gradients(model, cloud, cloud.label)
        for a, f in zip(analytic, numeric):
            worst = max(worst, relative_error(a, f))
    check(
        1,
        worst < 1e-4,
        f"input/param/logit gradients vs central differences on 3 random "
        f"instances, worst relative error {worst:.2e} (< 1e-4)",
    )


def test_criterion_02_constraint_exactness(desk):
    model, dataset = desk["model_a"], desk["dataset"]
    cloud = next(
        s.cloud for s in dataset.test if net.predict(model, s.cloud)[0] == s.cloud.label
    )
    global_res = run_attack(model, cloud, cloud.label, FAST)
    global_norm = float(np.linalg.norm(global_res.deltas))
    ok_global = abs(global_norm - 1.0) <= 1e-9

    point_res = run_attack(
        model, cloud, cloud.label, AttackConfig("fast_l2_point", epsilon=0.05)
    )
    norms = np.linalg.norm(point_res.deltas, axis=1)
    ok_point = bool(
        np.all((np.abs(norms) <= 1e-9) | (np.abs(norms - 0.05) <= 1e-9))
    )

    sign_res = run_attack(
        model, cloud, cloud.label, AttackConfig("fast_sign", epsilon=0.05)
    )
    ok_sign = bool(np.isin(sign_res.deltas, (-0.05, 0.0, 0.05)).all())
    check(
        2,
        ok_global and ok_point and ok_sign,
        f"fast l2_global norm {global_norm!r} = 1.0 +- 1e-9 at eps=1; "
        f"l2_point norms in {{0, eps}} +- 1e-9: {ok_point}; "
        f"sign magnitudes in {{0, eps}} exactly: {ok_sign}",
    )


def test_criterion_03_geometry_oracles(desk):
    rng = np.random.default_rng(17)
    worst_gap = 0.0
    pairs = 0
    while pairs < 100:
        triangle = rng.normal(size=(3, 3))
        edge_cross = np.cross(triangle[1] - triangle[0], triangle[2] - triangle[0])
        if np.linalg.norm(edge_cross) < 1e-6:
            continue
        point = rng.normal(size=3) * 2.0
        projected = project_to_triangle(point, triangle)
        exact = np.linalg.norm(point - projected)
        oracle = grid_min_distance(point, triangle)
        # the grid minimum upper-bounds the true distance
        worst_gap = max(worst_gap, exact - oracle)
        pairs += 1
    ok_project = worst_gap <= 1e-4

    cloud = desk["dataset"].test[0].cloud
    deltas = rng.normal(size=cloud.points.shape) * 0.3
    deltas[::5] = 0.0
    adversarial = cloud.with_points(cloud.points + deltas)
    clipped = clip_perturbation_norms(cloud, adversarial)
    new_deltas = clipped.points - cloud.points
    target = mean_nn_distance(cloud)
    moving = np.linalg.norm(deltas, axis=1) > 0
    norms = np.linalg.norm(new_deltas[moving], axis=1)
    ok_norms = bool(np.all(np.abs(norms - target) <= 1e-9))
    unit_old = deltas[moving] / np.linalg.norm(deltas[moving], axis=1, keepdims=True)
    unit_new = new_deltas[moving] / norms[:, None]
    ok_direction = bool(np.all(np.abs((unit_old * unit_new).sum(axis=1) - 1.0) <= 1e-9))
    check(
        3,
        ok_project and ok_norms and ok_direction,
        f"triangle projection vs 1e4-sample grid oracle on 100 pairs, worst "
        f"excess {worst_gap:.2e} (<= 1e-4); clipped norms = mean NN distance "
        f"+- 1e-9: {ok_norms}; directions preserved: {ok_direction}",
    )


def test_criterion_04_training(desk):
    accuracy = desk["test_accuracy"]
    seconds = desk["train_seconds"]
    check(
        4,
        accuracy >= 0.90 and seconds <= 300.0,
        f"plain training reached {accuracy:.3f} clean test accuracy "
        f"in {seconds:.0f}s (need >= 0.90 within 300s)",
    )


def test_criterion_05_attack_effectiveness(matrix):
    fast = _cell(matrix, "fast_l2_global", "none")
    iterative = _cell(matrix, "iter_l2_global", "none")
    clipped = _cell(matrix, "iter_l2_global+clip", "none")
    retention = clipped / iterative
    check(
        5,
        iterative > fast and iterative >= 0.60 and retention >= 0.50,
        f"success: iter {iterative:.3f} > fast {fast:.3f}; iter >= 0.60; "
        f"clip retains {retention:.2f} of unclipped (>= 0.50)",
    )


def test_criterion_06_defense_effectiveness(matrix):
    iter_base = _cell(matrix, "iter_l2_global", "none")
    iter_outl = _cell(matrix, "iter_l2_global", "remove_outliers")
    outlier_cut = 1.0 - iter_outl / iter_base
    fast_base = _cell(matrix, "fast_l2_global", "none")
    fast_adv = _cell(matrix, "fast_l2_global", "adversarial_training")
    adv_cut = 1.0 - fast_adv / fast_base
    clean_cost = _cell(matrix, "none", "remove_outliers")
    check(
        6,
        outlier_cut >= 0.50 and adv_cut >= 0.50 and clean_cost <= 0.05,
        f"outlier removal cuts iter error {iter_base:.3f}->{iter_outl:.3f} "
        f"({100 * outlier_cut:.0f}% >= 50%); adversarial training cuts fast "
        f"error {fast_base:.3f}->{fast_adv:.3f} ({100 * adv_cut:.0f}% >= 50%); "
        f"outlier clean-accuracy cost {100 * clean_cost:.1f} points (<= 5)",
    )


def test_criterion_07_jsma(desk, matrix):
    model, dataset = desk["model_a"], desk["dataset"]
    # default-config L0 budget on a handful of desk clouds
    moved_counts = []
    for sample in dataset.test[:5]:
        result = run_attack(model, sample.cloud, sample.cloud.label, JSMA)
        moved_counts.append(
            int((np.linalg.norm(result.deltas, axis=1) > 0).sum())
        )
    ok_budget = max(moved_counts) <= 10

    # hand-built two-point model: identity point features, fixed head
    toy = net.PointNetModel(
        point_mlp_layers=[(np.eye(3), np.zeros(3))],
        head_layers=[(np.array([[1.0, -1.0], [2.0, -2.0], [-1.0, 1.0]]), np.zeros(2))],
        class_count=2,
    )
    toy_cloud = PointCloud(np.array([[1.0, 2.0, 1.0], [2.0, 1.0, 2.0]]), label=0)
    oracle_pick = int(np.argmax(
        brute_force_saliency(net.logit_jacobians(toy, toy_cloud), 0)
    ))
    step = run_attack(toy, toy_cloud, 0, replace(JSMA, iterations=1))
    attack_pick = int(np.flatnonzero(np.linalg.norm(step.deltas, axis=1) > 0)[0])
    ok_oracle = attack_pick == oracle_pick

    jsma_base = _cell(matrix, "jsma", "none")
    jsma_outl = _cell(matrix, "jsma", "remove_outliers")
    cut = 1.0 - jsma_outl / jsma_base
    check(
        7,
        ok_budget and ok_oracle and cut >= 0.75,
        f"moved points {moved_counts} (all <= 10); selection matches "
        f"brute-force saliency oracle (picked point {attack_pick}); outlier "
        f"removal cuts success {jsma_base:.3f}->{jsma_outl:.3f} "
        f"({100 * cut:.0f}% >= 75%)",
    )


def test_criterion_08_transfer(desk):
    fast = transfer_eval(
        desk["model_a"], desk["model_b"], FAST, desk["dataset"].test
    )
    # small budget-matched steps stop near the source boundary and overfit it
    iterative = transfer_eval(
        desk["model_a"], desk["model_b"], ITER_MINIMAL, desk["dataset"].test
    )
    check(
        8,
        not fast.statistically_empty
        and not iterative.statistically_empty
        and fast.transfer_rate >= iterative.transfer_rate,
        f"fast {fast.transferred_count}/{fast.source_success_count} = "
        f"{fast.transfer_rate:.3f} >= iter {iterative.transferred_count}/"
        f"{iterative.source_success_count} = {iterative.transfer_rate:.3f}",
    )


def test_criterion_09_determinism(desk, tmp_path):
    ini = tmp_path / "desk.ini"
    ini.write_text(
        "[dataset]\n"
        f"samples_per_class = {DESK_SPEC.samples_per_class}\n"
        f"points_per_cloud = {DESK_SPEC.points_per_cloud}\n"
        f"seed = {DESK_SPEC.seed}\n"
        f"train_split = {DESK_SPEC.train_split!r}\n"
        "\n[attacks]\nmethods = none, fast_l2_global, iter_l2_global\n"
        "epsilon = 0.1\n"
        "\n[defenses]\nmethods = none, remove_outliers\n"
    )
    checkpoint = tmp_path / "model.ckpt"
    net.save_checkpoint(desk["model_a"], checkpoint)
    blobs = []
    for tag in ("first", "second"):
        out = tmp_path / tag
        rc = cli.main(
            [
                "matrix", "--config", str(ini),
                "--model", str(checkpoint), "--out-dir", str(out),
            ]
        )
        assert rc == 0
        blobs.append((out / "matrix.csv").read_bytes())
    check(
        9,
        blobs[0] == blobs[1] and len(blobs[0]) > 0,
        f"two matrix runs with identical config/seed produced byte-identical "
        f"CSV reports ({len(blobs[0])} bytes)",
    )


def test_criterion_10_outlier_filter_precision_recall(desk):
    rng = np.random.default_rng(202)
    injected_removed = injected_total = 0
    original_removed = original_total = 0
    for sample in desk["dataset"].test:
        cloud = sample.cloud
        n = len(cloud)
        n_inject = round(0.05 * n)
        m = mean_nn_distance(cloud)
        base = cloud.points[rng.choice(n, size=n_inject, replace=False)]
        # displaced radially away from the (origin-centered) cloud, so the
        # injected points are genuine outliers rather than surface re-landings
        norms = np.linalg.norm(base, axis=1, keepdims=True)
        directions = np.where(
            norms > 1e-9, base / np.maximum(norms, 1e-9), [0.0, 0.0, 1.0]
        )
        spiked = PointCloud(
            np.vstack([cloud.points, base + 10.0 * m * directions]),
            label=cloud.label,
        )
        restored = remove_outliers(spiked, k=10, stddev_epsilon=1.0)
        removed = set(restored.removed_indices.tolist())
        injected_idx = set(range(n, n + n_inject))
        injected_removed += len(removed & injected_idx)
        injected_total += n_inject
        original_removed += len(removed - injected_idx)
        original_total += n
    recall = injected_removed / injected_total
    false_positive = original_removed / original_total
    check(
        10,
        recall >= 0.95 and false_positive <= 0.10,
        f"removed {injected_removed}/{injected_total} = {recall:.3f} of "
        f"injected outliers (>= 0.95) and {original_removed}/{original_total} "
        f"= {false_positive:.4f} of originals (<= 0.10)",
    )
