"""Trainable parameters, the three-phase forward pass, loss and gradients.

Forward pass for one bag ``X`` (n x d_in):

1. ``Z = relu(X @ E.T + b)``                       instance encoder
2. k-means (k=3) on ``Z @ A.T``                     latent grouping
3. leave-one-group-out KL effects -> weights ``w``  counterfactual ranking
4. ``z_final`` = effect-weighted group centroids    re-weighted embedding
5. ``softmax(H @ z_final + c)``                     prediction head

Loss is ``CE(probs, y) - gamma * d_reg`` where ``d_reg`` is the metric
distance between the tumour-group mean and the mean of the other instances.
Gradients treat the grouping, the weights and the tumour index as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .cid import EffectVector, FactorMap, assign_factors, classify, group_effects, normalize_effects
from .data import Bag
from .exceptions import DimensionError, InvalidInputError
from .metric_grouping import (N_GROUPS, GroupingResult, MetricParams, default_rank, init_metric,
                              kmeans_group, metric_distance)
from .numerics import SeededStream

AGG_MODES = ("centroid_weighted", "instance_weighted")
CE_FLOOR = 1e-12


@dataclass
class LossConfig:
    gamma: float = 0.1
    agg_mode: str = "centroid_weighted"

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise InvalidInputError("gamma must be finite and >= 0")
        if self.agg_mode not in AGG_MODES:
            raise InvalidInputError(f"agg_mode must be one of {AGG_MODES}, got {self.agg_mode!r}")


@dataclass
class ModelParams:
    encoder: np.ndarray
    encoder_bias: np.ndarray
    head: np.ndarray
    head_bias: np.ndarray
    metric: MetricParams

    def __post_init__(self):
        d, d_in = self.encoder.shape
        if self.encoder_bias.shape != (d,):
            raise DimensionError("encoder bias must have one entry per encoder row")
        if self.head.ndim != 2 or self.head.shape[1] != d or self.head_bias.shape != (self.head.shape[0],):
            raise DimensionError("head must be (C x d) with a length-C bias")
        if self.metric.dim != d:
            raise DimensionError(f"metric acts on dimension {self.metric.dim}, encoder width is {d}")

    @property
    def d_in(self) -> int:
        return self.encoder.shape[1]

    @property
    def width(self) -> int:
        return self.encoder.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head.shape[0]

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"encoder": self.encoder, "encoder_bias": self.encoder_bias, "head": self.head,
                "head_bias": self.head_bias, "metric": self.metric.A}

    @classmethod
    def from_dict(cls, arrays) -> "ModelParams":
        return cls(np.asarray(arrays["encoder"], dtype=np.float64),
                   np.asarray(arrays["encoder_bias"], dtype=np.float64),
                   np.asarray(arrays["head"], dtype=np.float64),
                   np.asarray(arrays["head_bias"], dtype=np.float64),
                   MetricParams(arrays["metric"]))

    def copy(self) -> "ModelParams":
        return ModelParams.from_dict({k: v.copy() for k, v in self.as_dict().items()})


def init_params(d_in: int, width: int, num_classes: int, rank: Optional[int] = None,
                seed: int = 0) -> ModelParams:
    """He-scaled encoder, small head, zero biases, renormalized metric."""
    stream = SeededStream(seed)
    rank = default_rank(width) if rank is None else rank
    encoder = stream.draw_gaussian((width, d_in), std=np.sqrt(2.0 / d_in))
    head = stream.draw_gaussian((num_classes, width), std=np.sqrt(1.0 / width))
    metric = init_metric(width, rank, stream)
    return ModelParams(encoder, np.zeros(width), head, np.zeros(num_classes), metric)


@dataclass
class ForwardTrace:
    Z: np.ndarray
    grouping: GroupingResult
    effects: EffectVector
    factors: FactorMap
    z_final: np.ndarray
    probs: np.ndarray
    d_reg: float
    reg_degenerate: bool = False
    order: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def assignments(self) -> np.ndarray:
        return self.grouping.assignments

    @property
    def weights(self) -> np.ndarray:
        return self.effects.w

    @property
    def degenerate(self) -> bool:
        return bool(self.grouping.degenerate or self.effects.whole_bag_group is not None
                    or self.reg_degenerate)

    def instance_factors(self) -> np.ndarray:
        """Factor code (0=TC, 1=ME, 2=BG) of every instance, in input order."""
        return self.factors.as_codes()[self.assignments]


def _features(bag) -> np.ndarray:
    X = bag.features if isinstance(bag, Bag) else np.asarray(bag, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("a bag must be a 2-D (instances x features) array")
    return X


def _pre_activation(params: ModelParams, X) -> np.ndarray:
    if X.shape[1] != params.d_in:
        raise DimensionError(f"bag has feature_dim {X.shape[1]}, encoder expects {params.d_in}")
    return X @ params.encoder.T + params.encoder_bias


def encode(params: ModelParams, bag) -> np.ndarray:
    """Row-wise ``relu(x @ E.T + b)``."""
    return np.maximum(_pre_activation(params, _features(bag)), 0.0)


def pooling_coefficients(assignments, w, agg_mode: str = "centroid_weighted") -> np.ndarray:
    """Per-instance coefficients ``c`` with ``z_final = c @ Z``.

    ``centroid_weighted``: ``sum_k w_k * mean(Z_k)`` with the weights of
    empty groups dropped and the rest renormalized. ``instance_weighted``:
    ``(1/n) * sum_i w_{g(i)} z_i``.
    """
    assignments = np.asarray(assignments)
    w = np.asarray(w, dtype=np.float64)
    n = assignments.shape[0]
    sizes = np.bincount(assignments, minlength=N_GROUPS).astype(np.float64)
    if agg_mode == "centroid_weighted":
        live = np.where(sizes > 0, w, 0.0)
        total = live.sum()
        if total <= 0:
            live = (sizes > 0).astype(np.float64)
            total = live.sum()
        per_group = np.divide(live / total, sizes, out=np.zeros(N_GROUPS), where=sizes > 0)
        return per_group[assignments]
    if agg_mode == "instance_weighted":
        return w[assignments] / n
    raise InvalidInputError(f"unknown agg_mode {agg_mode!r}")


def reweighted_embedding(Z, assignments, w, agg_mode: str = "centroid_weighted") -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    return pooling_coefficients(assignments, w, agg_mode) @ Z


def _separation_vector(assignments, tc: int):
    # s with (s @ Z) = mean(Z_tc) - mean(Z \ Z_tc); None when undefined
    mask = np.asarray(assignments) == tc
    n_tc = int(mask.sum())
    n = mask.shape[0]
    if n_tc == 0 or n_tc == n:
        return None
    return np.where(mask, 1.0 / n_tc, -1.0 / (n - n_tc))


def separation_regularizer(metric: MetricParams, Z, assignments, tc: int):
    """Return ``(d_reg, degenerate)``.

    ``d_reg`` is the metric distance between the tumour-group mean and the
    mean of every other instance; 0 with ``degenerate=True`` when the tumour
    group is empty or spans the bag.
    """
    Z = np.asarray(Z, dtype=np.float64)
    mask = np.asarray(assignments) == tc
    if not mask.any() or mask.all():
        return 0.0, True
    return metric_distance(metric, Z[mask].mean(axis=0), Z[~mask].mean(axis=0)), False


def _canonical_order(X) -> np.ndarray:
    # lexicographic row order makes every downstream float operation order-free
    return np.lexsort(X.T[::-1])


def forward(params: ModelParams, bag, cfg: Optional[LossConfig] = None) -> ForwardTrace:
    """Run grouping, counterfactual ranking, re-weighting and the head on one bag.

    The result does not depend on the order of the bag's rows; ``Z`` and the
    assignments are reported in the caller's row order.
    """
    cfg = cfg or LossConfig()
    X = _features(bag)
    order = _canonical_order(X)
    Zc = encode(params, X[order])
    grouping = kmeans_group(params.metric, Zc)
    effects = normalize_effects(group_effects(params.head, params.head_bias, Zc, grouping.assignments))
    factors = assign_factors(effects.w)
    z_final = reweighted_embedding(Zc, grouping.assignments, effects.w, cfg.agg_mode)
    probs = classify(params.head, params.head_bias, z_final)
    d_reg, reg_degenerate = separation_regularizer(params.metric, Zc, grouping.assignments, factors.tc)

    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    grouping.assignments = grouping.assignments[inverse]
    return ForwardTrace(Zc[inverse], grouping, effects, factors, z_final, probs, d_reg,
                        reg_degenerate, order)


def loss_given_grouping(params: ModelParams, bag, label: int, assignments, w, tc: int,
                        cfg: Optional[LossConfig] = None, with_grads: bool = True):
    """Loss and gradients with the grouping, weights and tumour index held fixed.

    Returns ``(loss, grads, info)`` where ``grads`` maps the names of
    :meth:`ModelParams.as_dict` to arrays (``None`` when ``with_grads`` is
    false) and ``info`` carries ``probs``, ``ce`` and ``d_reg``.
    """
    cfg = cfg or LossConfig()
    X = _features(bag)
    if not 0 <= label < params.num_classes:
        raise InvalidInputError(f"label {label} outside 0..{params.num_classes - 1}")
    if np.asarray(assignments).shape != (X.shape[0],):
        raise DimensionError("one assignment per instance is required")
    H = _pre_activation(params, X)
    Z = np.maximum(H, 0.0)
    coef = pooling_coefficients(assignments, w, cfg.agg_mode)
    z_final = coef @ Z
    probs = classify(params.head, params.head_bias, z_final)
    p_y = probs[label]
    ce = -np.log(max(p_y, CE_FLOOR))

    A = params.metric.A
    s = _separation_vector(assignments, tc)
    if s is None:
        d_reg, u, delta = 0.0, None, None
    else:
        delta = s @ Z
        u = A @ delta
        d_reg = float(np.linalg.norm(u))
    loss = float(ce - cfg.gamma * d_reg)
    info = {"probs": probs, "ce": float(ce), "d_reg": d_reg, "z_final": z_final,
            "reg_degenerate": s is None}
    if not with_grads:
        return loss, None, info

    dlogits = probs.copy()
    if p_y >= CE_FLOOR:
        dlogits[label] -= 1.0
    else:
        dlogits[:] = 0.0
    g_head = np.outer(dlogits, z_final)
    g_head_bias = dlogits
    dZ = np.outer(coef, params.head.T @ dlogits)
    g_A = np.zeros_like(A)
    if cfg.gamma > 0 and d_reg > 0:
        g_A = -cfg.gamma * np.outer(u, delta) / d_reg
        dZ -= cfg.gamma * np.outer(s, A.T @ u) / d_reg
    dH = dZ * (H > 0)
    grads = {"encoder": dH.T @ X, "encoder_bias": dH.sum(axis=0), "head": g_head,
             "head_bias": g_head_bias, "metric": g_A}
    return loss, grads, info


def loss_and_grads(params: ModelParams, bag, label: int, cfg: Optional[LossConfig] = None):
    """Full forward pass followed by the fixed-grouping loss and gradients.

    Returns ``(loss, grads, trace)``.
    """
    cfg = cfg or LossConfig()
    trace = forward(params, bag, cfg)
    order = trace.order
    X = _features(bag)[order]
    loss, grads, _ = loss_given_grouping(params, X, label, trace.assignments[order], trace.effects.w,
                                         trace.factors.tc, cfg)
    return loss, grads, trace


def mean_pool_forward(params: ModelParams, bag) -> np.ndarray:
    """Probabilities of the plain mean-pooling baseline (no grouping, no re-weighting)."""
    X = _features(bag)
    Z = encode(params, X[_canonical_order(X)])
    return classify(params.head, params.head_bias, Z.mean(axis=0))


def mean_pool_loss_and_grads(params: ModelParams, bag, label: int):
    """Cross-entropy of the mean-pooling baseline and its gradients.

    Equivalent to :func:`loss_given_grouping` with all instances in one group
    and ``gamma = 0``; the metric gradient is therefore zero.
    """
    X = _features(bag)
    X = X[_canonical_order(X)]
    n = X.shape[0]
    assignments = np.zeros(n, dtype=np.int64)
    w = np.array([1.0, 0.0, 0.0])
    loss, grads, info = loss_given_grouping(params, X, label, assignments, w, 0,
                                            LossConfig(gamma=0.0))
    return loss, grads, info["probs"]
