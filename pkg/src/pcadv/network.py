"""Mini point-cloud classifier with exact, hand-derived gradients.

Architecture: a shared per-point MLP (ReLU after every layer), a global
max-pool over points, and a dense classifier head (ReLU after all but the
last layer). The max-pool makes the network permutation invariant and means
only the points selected by some pooled feature ("critical points") receive
input gradients.

Everything is float64 numpy. The backward pass is written out explicitly so
input gradients, per-class logit Jacobians, and parameter gradients are all
exact (finite-difference checked in the tests) rather than framework-provided.

Weight matrices are stored (fan_in, fan_out), activations row-per-point.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from pcadv.geometry import PointCloud

CHECKPOINT_MAGIC = b"PNETCKPT"
CHECKPOINT_VERSION = 1

DEFAULT_POINT_WIDTHS = (64, 64, 128, 256)
DEFAULT_HEAD_WIDTHS = (128, 64)

LayerList = list[tuple[np.ndarray, np.ndarray]]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class PointNetModel:
    """Parameters of the shared point MLP and the classifier head."""

    point_mlp_layers: LayerList
    head_layers: LayerList
    class_count: int

    def __post_init__(self):
        widths = [3]
        for w, b in self.point_mlp_layers + self.head_layers:
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("layer weight/bias shapes inconsistent")
            if w.shape[0] != widths[-1]:
                raise ValueError(
                    f"layer input width {w.shape[0]} does not chain from {widths[-1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
            widths.append(w.shape[1])
        if widths[-1] != self.class_count:
            raise ValueError("last head layer must emit one logit per class")

    @property
    def feature_width(self) -> int:
        return self.point_mlp_layers[-1][0].shape[1]

    def copy(self) -> "PointNetModel":
        return PointNetModel(
            [(w.copy(), b.copy()) for w, b in self.point_mlp_layers],
            [(w.copy(), b.copy()) for w, b in self.head_layers],
            self.class_count,
        )


@dataclass
class ModelGrads:
    """Gradients arranged like the model's own parameter lists.

    Deliberately unvalidated: during divergence the gradients go non-finite
    before the loss does, and the training loop owns that check.
    """

    point_mlp_layers: LayerList
    head_layers: LayerList


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, cached from one forward evaluation."""

    points: np.ndarray
    point_pre: list[np.ndarray]   # (N, w) pre-activations per point layer
    point_post: list[np.ndarray]  # (N, w) after ReLU
    pooled: np.ndarray            # (F,) global feature
    argmax_indices: np.ndarray    # (F,) point index selected per pooled feature
    head_pre: list[np.ndarray]
    head_post: list[np.ndarray]
    logits: np.ndarray
    probabilities: np.ndarray


def init_model(
    class_count: int,
    point_widths: Sequence[int] = DEFAULT_POINT_WIDTHS,
    head_widths: Sequence[int] = DEFAULT_HEAD_WIDTHS,
    seed=0,
) -> PointNetModel:
    """He-initialized model; head_widths excludes the final class layer."""
    rng = np.random.default_rng(seed)

    def make(widths):
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            scale = np.sqrt(2.0 / fan_in)
            layers.append((rng.normal(0.0, scale, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return layers

    point_layers = make([3, *point_widths])
    head_layers = make([point_widths[-1], *head_widths, class_count])
    return PointNetModel(point_layers, head_layers, class_count)


def _as_points(cloud: Union[PointCloud, np.ndarray]) -> np.ndarray:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValueError("expected a nonempty (N, 3) point array")
    return points


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def forward(model: PointNetModel, cloud: Union[PointCloud, np.ndarray]) -> ForwardTrace:
    """Evaluate the network on one cloud of any size, caching the full trace.

    Max-pool argmax ties break to the lowest point index.
    """
    points = _as_points(cloud)
    h = points
    point_pre, point_post = [], []
    for w, b in model.point_mlp_layers:
        pre = h @ w + b
        h = np.maximum(pre, 0.0)
        point_pre.append(pre)
        point_post.append(h)

    pooled = h.max(axis=0)
    argmax_indices = h.argmax(axis=0)

    z = pooled
    head_pre, head_post = [], []
    last = len(model.head_layers) - 1
    for i, (w, b) in enumerate(model.head_layers):
        pre = z @ w + b
        z = np.maximum(pre, 0.0) if i < last else pre
        head_pre.append(pre)
        head_post.append(z)

    return ForwardTrace(
        points=points,
        point_pre=point_pre,
        point_post=point_post,
        pooled=pooled,
        argmax_indices=argmax_indices,
        head_pre=head_pre,
        head_post=head_post,
        logits=z,
        probabilities=_softmax(z),
    )


def loss(trace: ForwardTrace, label: int) -> float:
    """Cross entropy -log p[label], via log-sum-exp for stability."""
    logits = trace.logits
    if not 0 <= label < len(logits):
        raise ValueError(f"label {label} out of range for {len(logits)} classes")
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()) - logits[label])


def predict(model: PointNetModel, cloud: Union[PointCloud, np.ndarray]) -> tuple[int, float]:
    """(class id, confidence); argmax ties resolve to the lowest class id."""
    probs = forward(model, cloud).probabilities
    cls = int(np.argmax(probs))
    return cls, float(probs[cls])


def _backward_inputs(model: PointNetModel, trace: ForwardTrace, dlogits: np.ndarray) -> np.ndarray:
    """Input gradients for K simultaneous logit-space seeds.

    dlogits: (K, C). Returns (K, N, 3). The max-pool routes each pooled
    feature's gradient to its argmax point only; every other row stays
    exactly zero.
    """
    d = dlogits
    for i in reversed(range(len(model.head_layers))):
        w, _ = model.head_layers[i]
        d = d @ w.T
        if i > 0:
            d = d * (trace.head_pre[i - 1] > 0.0)

    n, feat = len(trace.points), len(trace.pooled)
    dh = np.zeros((d.shape[0], n, feat))
    dh[:, trace.argmax_indices, np.arange(feat)] = d

    d = dh
    for i in reversed(range(len(model.point_mlp_layers))):
        w, _ = model.point_mlp_layers[i]
        d = (d * (trace.point_pre[i] > 0.0)) @ w.T
    return d


def _backward_params(
    model: PointNetModel, trace: ForwardTrace, dlogits: np.ndarray
) -> tuple[np.ndarray, ModelGrads]:
    """Single-seed backward pass that also accumulates parameter gradients.

    dlogits: (C,). Returns (input gradient (N, 3), gradients shaped like the
    model's own parameter lists).
    """
    head_grads: LayerList = [None] * len(model.head_layers)
    d = dlogits
    for i in reversed(range(len(model.head_layers))):
        w, _ = model.head_layers[i]
        inp = trace.pooled if i == 0 else trace.head_post[i - 1]
        head_grads[i] = (np.outer(inp, d), d.copy())
        d = d @ w.T
        if i > 0:
            d = d * (trace.head_pre[i - 1] > 0.0)

    n, feat = len(trace.points), len(trace.pooled)
    dh = np.zeros((n, feat))
    dh[trace.argmax_indices, np.arange(feat)] = d

    point_grads: LayerList = [None] * len(model.point_mlp_layers)
    d = dh
    for i in reversed(range(len(model.point_mlp_layers))):
        w, _ = model.point_mlp_layers[i]
        dpre = d * (trace.point_pre[i] > 0.0)
        inp = trace.points if i == 0 else trace.point_post[i - 1]
        point_grads[i] = (inp.T @ dpre, dpre.sum(axis=0))
        d = dpre @ w.T

    return d, ModelGrads(point_grads, head_grads)


def _loss_seed(trace: ForwardTrace, label: int) -> np.ndarray:
    """d(cross entropy)/d(logits) = probabilities - onehot(label)."""
    seed = trace.probabilities.copy()
    seed[label] -= 1.0
    return seed


def input_gradient(
    model: PointNetModel, cloud: Union[PointCloud, np.ndarray], label: int
) -> np.ndarray:
    """Exact (N, 3) gradient of the cross-entropy loss w.r.t. every point."""
    trace = forward(model, cloud)
    loss(trace, label)  # validates the label
    return _backward_inputs(model, trace, _loss_seed(trace, label)[None, :])[0]


def logit_jacobians(model: PointNetModel, cloud: Union[PointCloud, np.ndarray]) -> np.ndarray:
    """(C, N, 3) gradients of every pre-softmax logit w.r.t. every point."""
    trace = forward(model, cloud)
    return _backward_inputs(model, trace, np.eye(model.class_count))


def param_gradients(
    model: PointNetModel, cloud: Union[PointCloud, np.ndarray], label: int
) -> ModelGrads:
    """Exact loss gradients arranged like the model's own parameters."""
    trace = forward(model, cloud)
    loss(trace, label)
    _, grads = _backward_params(model, trace, _loss_seed(trace, label))
    return grads


def batch_param_gradients(
    model: PointNetModel, clouds: Sequence[PointCloud], labels: Sequence[int]
) -> ModelGrads:
    """Mean of per-sample parameter gradients, accumulated in index order."""
    total = _zeros_like(model)
    for cloud, label in zip(clouds, labels):
        _add_scaled(total, param_gradients(model, cloud, label), 1.0 / len(clouds))
    return total


def _zeros_like(model: PointNetModel) -> ModelGrads:
    return ModelGrads(
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.point_mlp_layers],
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.head_layers],
    )


def _add_scaled(target, grads, factor: float) -> None:
    for (tw, tb), (gw, gb) in zip(
        target.point_mlp_layers + target.head_layers,
        grads.point_mlp_layers + grads.head_layers,
    ):
        tw += factor * gw
        tb += factor * gb


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 0.02
    seed: int = 0
    # when set, each step optimizes the mean of the clean loss and the loss on
    # a fresh whole-cloud-normalized gradient perturbation of magnitude epsilon
    adversarial_epsilon: Optional[float] = None


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: Optional[float] = None


def adversarial_objective(
    model: PointNetModel, cloud: PointCloud, label: int, epsilon: float
) -> float:
    """Mean of the clean loss and the loss on the epsilon-ball gradient step."""
    j_clean, _, perturbed = _objective_terms(model, cloud, label, epsilon)
    j_adv = loss(forward(model, perturbed), label)
    return 0.5 * (j_clean + j_adv)


def _objective_terms(model, cloud, label, epsilon):
    trace = forward(model, cloud)
    j_clean = loss(trace, label)
    grad = _backward_inputs(model, trace, _loss_seed(trace, label)[None, :])[0]
    norm = np.linalg.norm(grad)
    if norm > 0.0:
        perturbed = trace.points + epsilon * (grad / norm)
    else:
        perturbed = trace.points
    return j_clean, trace, perturbed


def _sample_objective(
    model: PointNetModel, cloud: PointCloud, label: int, adv_epsilon: Optional[float]
) -> tuple[float, PointNetModel]:
    """Per-sample loss value and parameter gradients, adversarial or plain."""
    if adv_epsilon is None:
        trace = forward(model, cloud)
        j = loss(trace, label)
        _, grads = _backward_params(model, trace, _loss_seed(trace, label))
        return j, grads

    j_clean, trace, perturbed = _objective_terms(model, cloud, label, adv_epsilon)
    _, grads_clean = _backward_params(model, trace, _loss_seed(trace, label))
    trace_adv = forward(model, perturbed)
    j_adv = loss(trace_adv, label)
    _, grads_adv = _backward_params(model, trace_adv, _loss_seed(trace_adv, label))
    grads = _zeros_like(model)
    _add_scaled(grads, grads_clean, 0.5)
    _add_scaled(grads, grads_adv, 0.5)
    return 0.5 * (j_clean + j_adv), grads


def accuracy(model: PointNetModel, clouds: Sequence[PointCloud]) -> float:
    correct = sum(1 for c in clouds if predict(model, c)[0] == c.label)
    return correct / len(clouds)


def train(
    model: PointNetModel,
    train_clouds: Sequence[PointCloud],
    config: TrainConfig,
    val_clouds: Optional[Sequence[PointCloud]] = None,
) -> tuple[PointNetModel, list[EpochStats]]:
    """Mini-batch SGD on labeled clouds; returns a trained copy plus a log.

    Deterministic for a fixed config seed: the only randomness is the epoch
    shuffle. Aborts if the objective stops being finite.
    """
    if not train_clouds:
        raise ValueError("training set is empty")
    for cloud in train_clouds:
        if not 0 <= cloud.label < model.class_count:
            raise ValueError(f"label {cloud.label} out of range")

    model = model.copy()
    rng = np.random.default_rng(config.seed)
    log: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_clouds))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_clouds[i] for i in order[start : start + config.batch_size]]
            step = _zeros_like(model)
            for cloud in batch:
                j, grads = _sample_objective(model, cloud, cloud.label, config.adversarial_epsilon)
                if not np.isfinite(j):
                    raise TrainingDiverged(
                        f"non-finite loss {j} at epoch {epoch}, sample index {start}"
                    )
                epoch_loss += j
                _add_scaled(step, grads, 1.0 / len(batch))
            _add_scaled(model, step, -config.learning_rate)
        log.append(
            EpochStats(
                epoch=epoch,
                train_loss=epoch_loss / len(train_clouds),
                train_acc=accuracy(model, train_clouds),
                val_acc=accuracy(model, val_clouds) if val_clouds else None,
            )
        )
    return model, log


def write_training_log(log: Sequence[EpochStats], path) -> None:
    """Per-epoch CSV: epoch, train loss, train acc, val acc."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for row in log:
            writer.writerow(
                [
                    row.epoch,
                    repr(row.train_loss),
                    repr(row.train_acc),
                    "" if row.val_acc is None else repr(row.val_acc),
                ]
            )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: PointNetModel, path) -> None:
    """Self-describing binary: magic, version, dimension table, little-endian float64 params."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, model.class_count)]
    for layers in (model.point_mlp_layers, model.head_layers):
        chunks.append(struct.pack("<I", len(layers)))
        for w, _ in layers:
            chunks.append(struct.pack("<II", *w.shape))
    for w, b in model.point_mlp_layers + model.head_layers:
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as handle:
        handle.write(b"".join(chunks))


def load_checkpoint(path) -> PointNetModel:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    version, class_count = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")

    shape_table = []
    for _ in range(2):
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shapes = []
        for _ in range(count):
            shape = struct.unpack_from("<II", blob, offset)
            offset += 8
            shapes.append(shape)
        shape_table.append(shapes)

    def read_layers(shapes):
        nonlocal offset
        layers = []
        for fan_in, fan_out in shapes:
            w_bytes = fan_in * fan_out * 8
            w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=offset)
            offset += w_bytes
            b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
            offset += fan_out * 8
            layers.append((w.reshape(fan_in, fan_out).copy(), b.copy()))
        return layers

    expected = offset + sum(
        (i * o + o) * 8 for shapes in shape_table for i, o in shapes
    )
    if len(blob) != expected:
        raise ValueError("checkpoint truncated or oversized")
    point_layers = read_layers(shape_table[0])
    head_layers = read_layers(shape_table[1])
    return PointNetModel(point_layers, head_layers, class_count)
