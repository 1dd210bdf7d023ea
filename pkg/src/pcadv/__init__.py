"""Desk-scale laboratory for adversarial attacks and defenses on point-cloud classifiers."""

from pcadv.attacks import (
    AdversarialResult,
    AttackConfig,
    clip_perturbation_norms,
    default_epsilon,
    fast_gradient,
    iterative_gradient,
    jsma,
    project_perturbation,
    run_attack,
)
from pcadv.datasets import Dataset, DatasetSpec, Sample, build_dataset
from pcadv.defenses import DefenseConfig, RestoredCloud, apply_defense, remove_outliers, remove_salient
from pcadv.experiments import (
    EvalReport,
    HeatmapMatrix,
    TransferReport,
    export_cloud_ply,
    export_heatmap_csv,
    export_matrix_csv,
    export_report_json,
    run_matrix,
    targeted_heatmap,
    transfer_eval,
)
from pcadv.geometry import (
    CloudTransform,
    NeighborStats,
    OffParseError,
    PointCloud,
    TriangleMesh,
    load_off,
    mean_nn_distance,
    neighbor_stats,
    normalize,
    project_to_triangle,
    sample_surface,
    write_ply,
)
from pcadv.network import (
    PointNetModel,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    forward,
    init_model,
    input_gradient,
    load_checkpoint,
    logit_jacobians,
    loss,
    predict,
    save_checkpoint,
    train,
)

__all__ = [
    "AdversarialResult",
    "AttackConfig",
    "CloudTransform",
    "Dataset",
    "DatasetSpec",
    "DefenseConfig",
    "EvalReport",
    "HeatmapMatrix",
    "NeighborStats",
    "OffParseError",
    "PointCloud",
    "PointNetModel",
    "RestoredCloud",
    "Sample",
    "TrainConfig",
    "TrainingDiverged",
    "TransferReport",
    "TriangleMesh",
    "accuracy",
    "apply_defense",
    "build_dataset",
    "clip_perturbation_norms",
    "default_epsilon",
    "export_cloud_ply",
    "export_heatmap_csv",
    "export_matrix_csv",
    "export_report_json",
    "fast_gradient",
    "forward",
    "init_model",
    "input_gradient",
    "iterative_gradient",
    "jsma",
    "load_checkpoint",
    "load_off",
    "logit_jacobians",
    "loss",
    "mean_nn_distance",
    "neighbor_stats",
    "normalize",
    "predict",
    "project_perturbation",
    "project_to_triangle",
    "remove_outliers",
    "remove_salient",
    "run_attack",
    "run_matrix",
    "sample_surface",
    "save_checkpoint",
    "targeted_heatmap",
    "train",
    "transfer_eval",
    "write_ply",
]
