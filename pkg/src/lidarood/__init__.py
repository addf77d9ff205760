"""Desk-scale out-of-distribution detection for LiDAR-like point clouds.

Capabilities: deterministic synthetic scene generation, gradient-noise
surface-raise anomaly synthesis, static and prior-reweighted anomaly
scoring, a three-term training objective with exact gradients, and the full
point-level / object-level evaluation protocol.
"""

__version__ = "0.1.0"

from .core import (
    ClassSpec,
    ContractError,
    FormatError,
    LabelMap,
    LogitField,
    PointCloud,
    Role,
    ScoreField,
    load_labels,
    load_point_cloud,
    load_scores,
    save_labels,
    save_point_cloud,
    save_scores,
)
from .cluster import ClusterAssignment, dbscan, largest_cluster
from .losses import LossConfig, Orientation, aux_logistic_loss, ce_loss, total_loss, void_soft_loss
from .metrics import (
    EvalConfig,
    MatchResult,
    auroc,
    average_precision,
    cluster_predictions,
    evaluate_scenes,
    fpr_at_95_tpr,
    match_instances,
    panoptic_scores,
    write_report,
)
from .perlin import PerlinField, RaiseConfig, perlin2d, perlin_raise
from .priornet import PriorParams, init_params, prior_backward, prior_weight
from .scenes import SceneConfig, default_class_spec, generate_scene, inject_eval_anomaly
from .scoring import (
    ScoreMethod,
    classify,
    energy_score,
    entropy_score,
    extended_energy_score,
    maxlogit_score,
    reweighted_score,
    static_score,
)
from .trainer import Backbone, TrainConfig, extract_features, forward, load_checkpoint, save_checkpoint, train
