"""Experiment orchestration: the attack/defense evaluation matrix, transfer
attacks between independently trained models, the targeted-attack heatmap,
and report/cloud export.

Protocol notes that shape every number here:

- Attacks are evaluated only on test clouds the model classifies correctly,
  so the (no attack, no defense) cell is 0 by construction.
- The threat model is non-adaptive: every attack is crafted against the
  undefended forward pass of the evaluation model, then each defense column
  restores (or swaps in the adversarially trained checkpoint) before
  re-classification.
- Transfer rates follow the source-success convention: only perturbations
  that fooled the source model are re-evaluated on the target, so the
  denominator is the source-success count exactly.

Every rate is emitted with its numerator and denominator, and floats are
serialized via repr, so reports are recomputable and byte-stable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from pcadv.attacks import AdversarialResult, AttackConfig, run_attack
from pcadv.datasets import Sample
from pcadv.defenses import DefenseConfig, apply_defense
from pcadv.geometry import write_ply
from pcadv.network import PointNetModel, predict

REPORT_SCHEMA_VERSION = 1
PERTURBED_FLAG_THRESHOLD = 1e-12


@dataclass
class EvalReport:
    """Attack x defense error-rate matrix plus per-attack summaries."""

    attack_names: list
    defense_names: list
    error_rates: np.ndarray     # (A, D) fraction misclassified after defense
    numerators: np.ndarray      # (A, D) misclassified counts
    denominators: np.ndarray    # (A, D) evaluated counts
    success_rates: np.ndarray   # (A,) undefended fooling rate per attack
    perceptibility: np.ndarray  # (A,) mean whole-cloud L2 of the perturbation
    clean_accuracy: float
    eligible_count: int
    test_count: int


@dataclass
class TransferReport:
    source_id: str
    target_id: str
    attack_name: str
    transfer_rate: float
    source_success_count: int   # the denominator, exactly
    transferred_count: int
    eligible_count: int
    statistically_empty: bool


@dataclass
class HeatmapMatrix:
    """Targeted-attack success rates; rows = target class, cols = true label.

    Diagonal cells are never attempted and stay NaN in `rates`.
    """

    class_names: list
    rates: np.ndarray       # (C, C) float, NaN on the diagonal
    successes: np.ndarray   # (C, C) int
    attempts: np.ndarray    # (C, C) int
    mean_success_rate: float
    mean_confidence: float  # over successful attacks; NaN if none succeeded


def _attach_mesh(config: AttackConfig, sample: Sample) -> AttackConfig:
    if config.postprocess == "project_to_mesh" and config.mesh is None:
        return replace(config, mesh=sample.mesh)
    return config


def _eligible(model: PointNetModel, samples: Sequence[Sample]):
    return [s for s in samples if predict(model, s.cloud)[0] == s.cloud.label]


def run_matrix(
    model: PointNetModel,
    test_samples: Sequence[Sample],
    attacks: Sequence[tuple],
    defenses: Sequence[tuple],
    adv_model: Optional[PointNetModel] = None,
) -> EvalReport:
    """Evaluate every (attack, defense) cell on the correctly classified
    test clouds.

    attacks: (name, AttackConfig or None) pairs; None means "no attack".
    defenses: (name, DefenseConfig) pairs. A defense with method
    adversarial_training requires adv_model (the swapped-in checkpoint) and
    applies no restoration. Each attack is crafted once per cloud against
    `model` and reused across all defense columns.
    """
    for name, defense in defenses:
        if defense.method == "adversarial_training" and adv_model is None:
            raise ValueError(
                f"defense column {name!r} needs an adversarially trained checkpoint"
            )
    correct = 0
    for sample in test_samples:
        correct += predict(model, sample.cloud)[0] == sample.cloud.label
    eligible = _eligible(model, test_samples)

    a_count, d_count = len(attacks), len(defenses)
    numerators = np.zeros((a_count, d_count), dtype=np.int64)
    denominators = np.zeros((a_count, d_count), dtype=np.int64)
    fooled = np.zeros(a_count, dtype=np.int64)
    perceptibility_sums = np.zeros(a_count)

    for sample in eligible:
        label = sample.cloud.label
        for a_idx, (_, attack_config) in enumerate(attacks):
            if attack_config is None:
                adv_cloud = sample.cloud
            else:
                result = run_attack(
                    model, sample.cloud, label, _attach_mesh(attack_config, sample)
                )
                adv_cloud = result.adversarial
                fooled[a_idx] += result.success
                perceptibility_sums[a_idx] += result.perceptibility
            for d_idx, (_, defense) in enumerate(defenses):
                if defense.method == "adversarial_training":
                    verdict = predict(adv_model, adv_cloud)[0]
                else:
                    restored = apply_defense(model, adv_cloud, defense)
                    verdict = predict(model, restored)[0]
                denominators[a_idx, d_idx] += 1
                numerators[a_idx, d_idx] += verdict != label

    n_eligible = len(eligible)
    with np.errstate(invalid="ignore"):
        error_rates = np.where(
            denominators > 0, numerators / np.maximum(denominators, 1), 0.0
        )
    success_rates = fooled / n_eligible if n_eligible else np.zeros(a_count)
    mean_perceptibility = (
        perceptibility_sums / n_eligible if n_eligible else np.zeros(a_count)
    )
    return EvalReport(
        attack_names=[name for name, _ in attacks],
        defense_names=[name for name, _ in defenses],
        error_rates=error_rates.astype(float),
        numerators=numerators,
        denominators=denominators,
        success_rates=np.asarray(success_rates, dtype=float),
        perceptibility=mean_perceptibility.astype(float),
        clean_accuracy=correct / len(test_samples) if test_samples else 0.0,
        eligible_count=n_eligible,
        test_count=len(test_samples),
    )


def transfer_eval(
    model_a: PointNetModel,
    model_b: PointNetModel,
    attack_config: AttackConfig,
    test_samples: Sequence[Sample],
    source_id: str = "A",
    target_id: str = "B",
    attack_name: Optional[str] = None,
) -> TransferReport:
    """Craft white-box on A, keep only A-fooling perturbations, re-evaluate
    the identical adversarial clouds on B."""
    eligible = _eligible(model_a, test_samples)
    source_successes = []
    for sample in eligible:
        result = run_attack(
            model_a, sample.cloud, sample.cloud.label, _attach_mesh(attack_config, sample)
        )
        if result.success:
            source_successes.append((sample, result))
    transferred = 0
    for sample, result in source_successes:
        transferred += predict(model_b, result.adversarial)[0] != sample.cloud.label
    empty = not source_successes
    return TransferReport(
        source_id=source_id,
        target_id=target_id,
        attack_name=attack_name or attack_config.method,
        transfer_rate=0.0 if empty else transferred / len(source_successes),
        source_success_count=len(source_successes),
        transferred_count=transferred,
        eligible_count=len(eligible),
        statistically_empty=empty,
    )


def targeted_heatmap(
    model: PointNetModel,
    test_samples: Sequence[Sample],
    attack_config: Optional[AttackConfig] = None,
    class_names: Optional[Sequence[str]] = None,
) -> HeatmapMatrix:
    """One targeted attempt per (correctly classified cloud, target != label).

    Cell (t, y) is the success fraction of driving true-label-y clouds to
    target t. The reported mean confidence averages the winning class's
    softmax probability over successful attacks only.
    """
    if attack_config is None:
        attack_config = AttackConfig("iter_l2_global", epsilon=5.0, iterations=10)
    class_count = model.class_count
    successes = np.zeros((class_count, class_count), dtype=np.int64)
    attempts = np.zeros((class_count, class_count), dtype=np.int64)
    confidences = []
    for sample in _eligible(model, test_samples):
        label = sample.cloud.label
        for target in range(class_count):
            if target == label:
                continue
            config = replace(
                _attach_mesh(attack_config, sample), target=target
            )
            result = run_attack(model, sample.cloud, label, config)
            attempts[target, label] += 1
            if result.success:
                successes[target, label] += 1
                confidences.append(result.adv_prediction[1])
    with np.errstate(invalid="ignore"):
        rates = np.where(attempts > 0, successes / np.maximum(attempts, 1), np.nan)
    total_attempts = int(attempts.sum())
    return HeatmapMatrix(
        class_names=list(class_names) if class_names else [str(i) for i in range(class_count)],
        rates=rates,
        successes=successes,
        attempts=attempts,
        mean_success_rate=float(successes.sum() / total_attempts) if total_attempts else 0.0,
        mean_confidence=float(np.mean(confidences)) if confidences else float("nan"),
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_matrix_csv(report: EvalReport, path) -> None:
    """Header row = defense names, first column = attack names. Rates are
    written via repr so a re-parse reproduces the exact floats."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["attack", *report.defense_names])
        for a_idx, attack_name in enumerate(report.attack_names):
            writer.writerow(
                [attack_name]
                + [repr(float(r)) for r in report.error_rates[a_idx]]
            )


def export_heatmap_csv(heatmap: HeatmapMatrix, path) -> None:
    """Rows = target class, columns = true class; diagonal cells are empty."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["target\\true", *heatmap.class_names])
        for t_idx, name in enumerate(heatmap.class_names):
            row = [name]
            for y_idx in range(len(heatmap.class_names)):
                value = heatmap.rates[t_idx, y_idx]
                row.append("" if np.isnan(value) else repr(float(value)))
            writer.writerow(row)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if np.isnan(value) else value
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def export_report_json(report, path) -> None:
    """Schema-versioned JSON dump of any report dataclass. NaN cells (the
    heatmap diagonal) serialize as null."""
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": type(report).__name__,
    }
    for key, value in vars(report).items():
        payload[key] = _jsonable(value)
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def export_cloud_ply(result: AdversarialResult, path) -> None:
    """Adversarial cloud with per-point `perturbed` flags."""
    flags = np.linalg.norm(result.deltas, axis=1) > PERTURBED_FLAG_THRESHOLD
    write_ply(path, result.adversarial.points, flags.astype(int))
