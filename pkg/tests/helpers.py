"""Independent oracles shared across the test suite.

Each helper deliberately recomputes its quantity by a different route than
the library (python loops, dense grids, finite differences) so agreement is
evidence, not tautology.
"""

import math

import numpy as np


def brute_force_knn_means(points, k):
    """Per-point mean distance to the k nearest others, via python sort."""
    points = np.asarray(points, dtype=float)
    means = []
    for i in range(len(points)):
        dists = sorted(
            math.dist(points[i], points[j]) for j in range(len(points)) if j != i
        )
        means.append(sum(dists[:k]) / k)
    return np.array(means)


def brute_force_nn_mean(points):
    """Mean single-nearest-neighbor distance, via python min."""
    points = np.asarray(points, dtype=float)
    total = 0.0
    for i in range(len(points)):
        total += min(
            math.dist(points[i], points[j]) for j in range(len(points)) if j != i
        )
    return total / len(points)


def grid_min_distance(point, triangle, divisions=140):
    """Min distance from `point` to a dense barycentric grid over the triangle.

    divisions=140 yields (141*142)/2 = 10011 samples, ~1e4. The grid minimum
    upper-bounds the true minimum, so any exact closest point must be at
    least as close.
    """
    a, b, c = np.asarray(triangle, dtype=float)
    point = np.asarray(point, dtype=float)
    best = math.inf
    for i in range(divisions + 1):
        for j in range(divisions + 1 - i):
            u = i / divisions
            v = j / divisions
            candidate = a + u * (b - a) + v * (c - a)
            best = min(best, math.dist(point, candidate))
    return best


def straight_line_logits(model, points):
    """Second, loop-based forward pass used as an oracle for network.forward."""
    feats = []
    for p in np.asarray(points, dtype=float):
        h = p
        for w, b in model.point_mlp_layers:
            h = np.maximum(w.T @ h + b, 0.0)
        feats.append(h)
    pooled = np.max(np.stack(feats), axis=0)
    z = pooled
    for idx, (w, b) in enumerate(model.head_layers):
        z = w.T @ z + b
        if idx < len(model.head_layers) - 1:
            z = np.maximum(z, 0.0)
    return z


def naive_cross_entropy(logits, label):
    """-log softmax without the log-sum-exp stabilization."""
    exps = np.exp(np.asarray(logits, dtype=float))
    return -math.log(exps[label] / exps.sum())


def fd_input_gradient(model, cloud, label, h=1e-4):
    """Central finite differences of the loss w.r.t. every point coordinate."""
    from pcadv.network import forward, loss

    base = cloud.points.copy()
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for d in range(3):
            plus = base.copy()
            plus[i, d] += h
            minus = base.copy()
            minus[i, d] -= h
            j_plus = loss(forward(model, cloud.with_points(plus)), label)
            j_minus = loss(forward(model, cloud.with_points(minus)), label)
            grad[i, d] = (j_plus - j_minus) / (2.0 * h)
    return grad


def fd_logit_jacobians(model, cloud, h=1e-4):
    """Central finite differences of every logit w.r.t. every point coordinate."""
    from pcadv.network import forward

    base = cloud.points.copy()
    c = model.class_count
    jac = np.zeros((c, base.shape[0], 3))
    for i in range(base.shape[0]):
        for d in range(3):
            plus = base.copy()
            plus[i, d] += h
            minus = base.copy()
            minus[i, d] -= h
            lp = forward(model, cloud.with_points(plus)).logits
            lm = forward(model, cloud.with_points(minus)).logits
            jac[:, i, d] = (lp - lm) / (2.0 * h)
    return jac


def fd_param_gradients(model, cloud, label, h=1e-4):
    """Central finite differences of the loss w.r.t. every weight and bias."""
    from pcadv.network import forward, loss

    grads = []
    for layer_list in (model.point_mlp_layers, model.head_layers):
        for w, b in layer_list:
            for arr in (w, b):
                g = np.zeros_like(arr)
                flat = arr.ravel()
                gflat = g.ravel()
                for idx in range(flat.size):
                    original = flat[idx]
                    flat[idx] = original + h
                    j_plus = loss(forward(model, cloud), label)
                    flat[idx] = original - h
                    j_minus = loss(forward(model, cloud), label)
                    flat[idx] = original
                    gflat[idx] = (j_plus - j_minus) / (2.0 * h)
                grads.append(g)
    return grads


def blob_task(n_per_class=8, points=16, seed=0, separation=1.0):
    """Two gaussian-blob classes split along z; separable by any sane model."""
    from pcadv.geometry import PointCloud

    rng = np.random.default_rng(seed)
    clouds = []
    for label, center in ((0, separation), (1, -separation)):
        for _ in range(n_per_class):
            pts = rng.normal(scale=0.15, size=(points, 3))
            pts[:, 2] += center
            clouds.append(PointCloud(pts, label=label))
    return clouds


def brute_force_saliency(jacobians, label):
    """Per-point saliency via explicit loops: sum |g_y|*|g_o| over dimensions
    where the true-logit and other-logit gradients have strictly opposite
    signs."""
    c, n, _ = jacobians.shape
    saliency = []
    for p in range(n):
        total = 0.0
        for d in range(3):
            g_y = jacobians[label, p, d]
            g_o = sum(jacobians[i, p, d] for i in range(c) if i != label)
            if g_y * g_o < 0.0:
                total += abs(g_y) * abs(g_o)
        saliency.append(total)
    return np.array(saliency)


def relative_error(analytic, numeric, grad_floor=1e-6):
    """Max relative disagreement over entries whose magnitude exceeds the floor."""
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    mask = np.abs(analytic) > grad_floor
    if not mask.any():
        return 0.0
    return float(
        np.max(np.abs(analytic[mask] - numeric[mask]) / np.abs(analytic[mask]))
    )
