"""White-box attacks on the point classifier, plus perceptibility reducers.

Three perturbation-constraint geometries for the gradient attacks:

  sign       per-coordinate epsilon * sign(gradient)
  l2_global  the whole N x 3 gradient rescaled to Frobenius norm epsilon
  l2_point   each point's own gradient rescaled to norm epsilon

each available as a one-step ("fast") or repeated ("iter") attack, in
untargeted (ascend the true-label loss) or targeted (descend the target-label
loss) mode. JSMA instead moves one argmax-saliency point per round, where
saliency is computed from per-class logit gradients. The two reducers trade
attack strength for visual plausibility: norm clipping rescales every
perturbation to the clean cloud's mean nearest-neighbor distance, projection
snaps points back onto their source triangles so the attack degenerates into
a resampling of surface density.

Attacks are pure: the model is only queried for gradients, never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from pcadv.geometry import (
    PointCloud,
    TriangleMesh,
    mean_nn_distance,
    project_to_triangle,
)
from pcadv.network import PointNetModel, input_gradient, logit_jacobians, predict

FAST_METHODS = ("fast_sign", "fast_l2_global", "fast_l2_point")
ITER_METHODS = ("iter_sign", "iter_l2_global", "iter_l2_point")
METHODS = FAST_METHODS + ITER_METHODS + ("jsma",)
POSTPROCESS_MODES = ("none", "clip_norms", "project_to_mesh")


def default_epsilon(method: str, targeted: bool) -> float:
    """Per-method step sizes, in normalized (unit-sphere) units."""
    if method == "jsma":
        return 0.5
    mode = method.split("_", 1)[1]
    if mode == "l2_global":
        return 5.0 if targeted else 1.0
    if mode == "l2_point":
        return 0.05
    return 0.05  # sign steps act per coordinate, same scale as per-point


@dataclass
class AttackConfig:
    """Everything an attack needs besides the model and the cloud.

    epsilon=None picks the method's default (targeted l2_global runs hotter).
    postprocess_in_loop=None resolves to the natural order: projection inside
    the iteration loop (gradients stay evaluated at on-surface iterates),
    clipping once after the final iteration (a post-hoc perceptibility fix).
    mesh is only consulted by project_to_mesh and must be co-normalized with
    the cloud.
    """

    method: str
    epsilon: Optional[float] = None
    iterations: int = 10
    target: Optional[int] = None
    postprocess: str = "none"
    postprocess_in_loop: Optional[bool] = None
    mesh: Optional[TriangleMesh] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.postprocess not in POSTPROCESS_MODES:
            raise ValueError(f"unknown postprocess {self.postprocess!r}")
        if self.epsilon is None:
            self.epsilon = default_epsilon(self.method, self.target is not None)
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.method not in FAST_METHODS and self.iterations < 1:
            raise ValueError("iterative methods need iterations >= 1")
        if self.method == "jsma" and self.target is not None:
            raise ValueError("jsma is untargeted only")
        if self.postprocess_in_loop is None:
            self.postprocess_in_loop = self.postprocess == "project_to_mesh"


@dataclass
class AdversarialResult:
    clean: PointCloud
    adversarial: PointCloud
    deltas: np.ndarray
    clean_prediction: tuple[int, float]
    adv_prediction: tuple[int, float]
    success: bool
    perceptibility: float


def _constraint_step(gradient: np.ndarray, mode: str, epsilon: float) -> np.ndarray:
    """One step of size epsilon in the given constraint geometry.

    Zero gradients produce zero steps rather than a division by zero: a point
    (or cloud) the loss ignores is left alone.
    """
    if mode == "sign":
        return epsilon * np.sign(gradient)
    if mode == "l2_global":
        norm = np.linalg.norm(gradient)
        if norm == 0.0:
            return np.zeros_like(gradient)
        return epsilon * gradient / norm
    if mode == "l2_point":
        norms = np.linalg.norm(gradient, axis=1)
        step = np.zeros_like(gradient)
        moving = norms > 0.0
        step[moving] = epsilon * gradient[moving] / norms[moving, None]
        return step
    raise ValueError(f"unknown constraint mode {mode!r}")


def _ascent_gradient(
    model: PointNetModel, points: np.ndarray, label: int, target: Optional[int]
) -> np.ndarray:
    """Direction that worsens the model: raise the true-label loss, or lower
    the target-label loss (the targeted variant subtracts the gradient)."""
    if target is None:
        return input_gradient(model, points, label)
    return -input_gradient(model, points, target)


def _postprocess_deltas(
    clean: PointCloud, deltas: np.ndarray, config: AttackConfig
) -> np.ndarray:
    cloud = clean.with_points(clean.points + deltas)
    if config.postprocess == "clip_norms":
        processed = clip_perturbation_norms(clean, cloud)
    elif config.postprocess == "project_to_mesh":
        if config.mesh is None:
            raise ValueError("postprocess=project_to_mesh requires config.mesh")
        processed = project_perturbation(cloud, config.mesh)
    else:
        return deltas
    return processed.points - clean.points


def _finalize(
    model: PointNetModel,
    clean: PointCloud,
    deltas: np.ndarray,
    label: int,
    config: AttackConfig,
) -> AdversarialResult:
    # deltas are the primary record (keeps sign steps exactly +-epsilon);
    # the adversarial cloud is literally clean + deltas, bit-for-bit
    adversarial = clean.with_points(clean.points + deltas)
    clean_prediction = predict(model, clean)
    adv_prediction = predict(model, adversarial)
    if config.target is None:
        success = adv_prediction[0] != label
    else:
        success = adv_prediction[0] == config.target
    return AdversarialResult(
        clean=clean,
        adversarial=adversarial,
        deltas=deltas,
        clean_prediction=clean_prediction,
        adv_prediction=adv_prediction,
        success=success,
        perceptibility=float(np.linalg.norm(deltas)),
    )


def fast_gradient(
    model: PointNetModel, cloud: PointCloud, label: int, config: AttackConfig
) -> AdversarialResult:
    """Single gradient evaluation, single constrained step."""
    if config.method not in FAST_METHODS:
        raise ValueError(f"fast_gradient cannot run method {config.method!r}")
    mode = config.method.split("_", 1)[1]
    gradient = _ascent_gradient(model, cloud.points, label, config.target)
    deltas = _constraint_step(gradient, mode, config.epsilon)
    if config.postprocess != "none":
        deltas = _postprocess_deltas(cloud, deltas, config)
    return _finalize(model, cloud, deltas, label, config)


def iterative_gradient(
    model: PointNetModel, cloud: PointCloud, label: int, config: AttackConfig
) -> AdversarialResult:
    """The fast step repeated, gradient recomputed at every iterate.

    The per-iteration step size is config.epsilon itself, not epsilon divided
    by the iteration count.
    """
    if config.method not in ITER_METHODS:
        raise ValueError(f"iterative_gradient cannot run method {config.method!r}")
    mode = config.method.split("_", 1)[1]
    deltas = np.zeros_like(cloud.points)
    for _ in range(config.iterations):
        gradient = _ascent_gradient(model, cloud.points + deltas, label, config.target)
        deltas = deltas + _constraint_step(gradient, mode, config.epsilon)
        if config.postprocess != "none" and config.postprocess_in_loop:
            deltas = _postprocess_deltas(cloud, deltas, config)
    if config.postprocess != "none" and not config.postprocess_in_loop:
        deltas = _postprocess_deltas(cloud, deltas, config)
    return _finalize(model, cloud, deltas, label, config)


def jsma(
    model: PointNetModel, cloud: PointCloud, label: int, config: AttackConfig
) -> AdversarialResult:
    """Point-wise saliency attack: move one argmax-saliency point per round.

    Per point, g_y is the true-logit gradient and g_o the summed gradient of
    every other logit (both pre-softmax). A dimension contributes
    |g_y| * |g_o| to the point's saliency only where the two gradients have
    strictly opposite signs; the selected point then moves -epsilon where
    g_y > g_o, +epsilon where g_y < g_o, dimension by dimension. Rounds with
    all-zero saliency stop the attack early. Points may be re-selected, so at
    most `iterations` distinct points ever move.
    """
    if config.method != "jsma":
        raise ValueError(f"jsma cannot run method {config.method!r}")
    if not 0 <= label < model.class_count:
        raise ValueError(f"label {label} out of range")
    deltas = np.zeros_like(cloud.points)
    for _ in range(config.iterations):
        jacobians = logit_jacobians(model, cloud.points + deltas)
        g_y = jacobians[label]
        g_o = jacobians.sum(axis=0) - g_y
        opposed = g_y * g_o < 0.0
        saliency = np.where(opposed, np.abs(g_y) * np.abs(g_o), 0.0).sum(axis=1)
        if not np.any(saliency > 0.0):
            break
        chosen = int(np.argmax(saliency))
        deltas[chosen] = deltas[chosen] + np.where(
            g_y[chosen] > g_o[chosen],
            -config.epsilon,
            np.where(g_y[chosen] < g_o[chosen], config.epsilon, 0.0),
        )
        if config.postprocess != "none" and config.postprocess_in_loop:
            deltas = _postprocess_deltas(cloud, deltas, config)
    if config.postprocess != "none" and not config.postprocess_in_loop:
        deltas = _postprocess_deltas(cloud, deltas, config)
    return _finalize(model, cloud, deltas, label, config)


def clip_perturbation_norms(clean: PointCloud, adv: PointCloud) -> PointCloud:
    """Rescale every nonzero per-point delta to the clean cloud's mean
    nearest-neighbor distance, keeping directions. Zero deltas stay zero."""
    if len(clean) != len(adv):
        raise ValueError("clean and adversarial clouds differ in size")
    target_norm = mean_nn_distance(clean)
    deltas = adv.points - clean.points
    norms = np.linalg.norm(deltas, axis=1)
    clipped = adv.points.copy()  # zero-delta rows stay bit-identical
    moving = norms > 0.0
    clipped[moving] = clean.points[moving] + target_norm * deltas[moving] / norms[moving, None]
    return adv.with_points(clipped)


def project_perturbation(adv: PointCloud, mesh: TriangleMesh) -> PointCloud:
    """Snap every point back onto its source triangle (given in the cloud's
    own coordinates), turning the perturbation into a surface resampling."""
    if adv.source_triangles is None:
        raise ValueError("projection needs per-point source triangles")
    projected = np.empty_like(adv.points)
    for i, triangle_index in enumerate(adv.source_triangles):
        triangle = mesh.triangle_vertices(int(triangle_index))
        projected[i] = project_to_triangle(adv.points[i], triangle)
    return adv.with_points(projected)


def run_attack(
    model: PointNetModel, cloud: PointCloud, label: int, config: AttackConfig
) -> AdversarialResult:
    """Dispatch on config.method."""
    if config.method in FAST_METHODS:
        return fast_gradient(model, cloud, label, config)
    if config.method in ITER_METHODS:
        return iterative_gradient(model, cloud, label, config)
    return jsma(model, cloud, label, config)
