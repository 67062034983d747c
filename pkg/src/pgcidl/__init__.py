"""Disentangled multiple-instance learning with PSD latent factor grouping.

Bags of instance features are grouped into three latent factors under a
learned low-rank Mahalanobis metric, the groups are ranked by the KL effect
of masking them out, and the bag embedding re-weights group centroids by
those effects.
"""

__version__ = "0.1.0"

from .cid import EffectVector, FactorMap, assign_factors, group_effects, mask_group, normalize_effects
from .data import Bag, Dataset, SynthConfig, generate_synthetic, load_bag_file, load_dataset, \
    save_dataset, split_dataset, write_bag_file
from .estimator import MeanPoolingMILClassifier, PGCIDLClassifier
from .evaluation import EvalReport, JointDistribution, auc_ovr, entropy_gap, evaluate, \
    factor_recovery, weighted_f1
from .metric_grouping import GroupingResult, MetricParams, kmeans_group, materialize_psd, \
    metric_distance, renormalize_metric
from .model import ForwardTrace, LossConfig, ModelParams, classify, encode, forward, init_params, \
    loss_and_grads, reweighted_embedding, separation_regularizer
from .numerics import RmspropState, SeededStream, kl_divergence, rmsprop_step, softmax
from .train import TrainConfig, TrainHistory, load_checkpoint, lr_at, save_checkpoint, train

__all__ = [
    "Bag", "Dataset", "EffectVector", "EvalReport", "FactorMap", "ForwardTrace", "GroupingResult",
    "JointDistribution", "LossConfig", "MeanPoolingMILClassifier", "MetricParams", "ModelParams",
    "PGCIDLClassifier", "RmspropState", "SeededStream", "SynthConfig", "TrainConfig", "TrainHistory",
    "assign_factors", "auc_ovr", "classify", "encode", "entropy_gap", "evaluate", "factor_recovery",
    "forward", "generate_synthetic", "group_effects", "init_params", "kl_divergence", "kmeans_group",
    "load_bag_file", "load_checkpoint", "load_dataset", "loss_and_grads", "lr_at", "mask_group",
    "materialize_psd", "metric_distance", "normalize_effects", "renormalize_metric",
    "reweighted_embedding", "rmsprop_step", "save_checkpoint", "save_dataset", "separation_regularizer",
    "softmax", "split_dataset", "train", "weighted_f1", "write_bag_file",
]
