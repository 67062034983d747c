"""Leave-one-group-out counterfactual effects.

For each latent group the bag is re-predicted with that group removed; the KL
divergence between the full prediction and the masked one is the group's
effect. Effects are normalized into weights, and the weights rank the groups
into tumour (TC), microenvironment (ME) and background (BG).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import DimensionError, InvalidInputError
from .metric_grouping import N_GROUPS
from .numerics import kl_divergence, softmax

KL_EPS = 1e-8


@dataclass
class EffectVector:
    D: np.ndarray
    w: Optional[np.ndarray] = None
    fallback_uniform: bool = False
    whole_bag_group: Optional[int] = None
    P_v: Optional[np.ndarray] = None
    P_k: List[Optional[np.ndarray]] = field(default_factory=list)


@dataclass(frozen=True)
class FactorMap:
    tc: int
    me: int
    bg: int

    def as_codes(self) -> np.ndarray:
        """``codes[group]`` is 0 (TC), 1 (ME) or 2 (BG)."""
        codes = np.empty(N_GROUPS, dtype=np.int64)
        codes[[self.tc, self.me, self.bg]] = [0, 1, 2]
        return codes


def classify(head, head_bias, embedding) -> np.ndarray:
    """Class probabilities ``softmax(head @ embedding + head_bias)``."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (head.shape[1],):
        raise DimensionError(f"head expects embeddings of length {head.shape[1]}, got shape {embedding.shape}")
    return softmax(head @ embedding + head_bias)


def mask_group(Z, assignments, k: int) -> np.ndarray:
    """Rows of ``Z`` not assigned to group ``k``, in their original order."""
    if k not in range(N_GROUPS):
        raise InvalidInputError(f"group index must be in 0..{N_GROUPS - 1}, got {k}")
    return np.asarray(Z)[np.asarray(assignments) != k]


def group_effects(head, head_bias, Z, assignments, eps: float = KL_EPS) -> EffectVector:
    """Raw KL effects ``D_k = KL(P_v || P_k)`` for the three groups.

    ``P_v`` and every ``P_k`` use unweighted mean pooling. A group that is
    empty leaves the bag untouched, so its effect is exactly 0. A group that
    covers the whole bag leaves nothing to pool; it receives the largest
    value representable under the KL floor, ``KL(P_v || eps)``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    assignments = np.asarray(assignments)
    if Z.ndim != 2 or Z.shape[1] != head.shape[1]:
        raise DimensionError(f"instances have width {Z.shape[-1]}, head expects {head.shape[1]}")
    if assignments.shape != (Z.shape[0],):
        raise DimensionError("one assignment per instance is required")
    P_v = classify(head, head_bias, Z.mean(axis=0))
    D = np.zeros(N_GROUPS)
    P_k: List[Optional[np.ndarray]] = []
    whole = None
    for k in range(N_GROUPS):
        kept = mask_group(Z, assignments, k)
        if kept.shape[0] == Z.shape[0]:
            P_k.append(P_v)
            continue
        if kept.shape[0] == 0:
            whole = k
            P_k.append(None)
            D[k] = kl_divergence(P_v, np.zeros_like(P_v), eps)
            continue
        pk = classify(head, head_bias, kept.mean(axis=0))
        P_k.append(pk)
        D[k] = kl_divergence(P_v, pk, eps)
    return EffectVector(D=D, whole_bag_group=whole, P_v=P_v, P_k=P_k)


def normalize_effects(effects) -> EffectVector:
    """``w_k = D_k / sum(D)``, or uniform weights when every effect vanishes.

    Accepts either an :class:`EffectVector` (filled in place and returned) or
    a raw sequence of three divergences.
    """
    ev = effects if isinstance(effects, EffectVector) else EffectVector(D=np.asarray(effects, dtype=np.float64))
    D = np.asarray(ev.D, dtype=np.float64)
    if D.shape != (N_GROUPS,):
        raise DimensionError(f"expected {N_GROUPS} effects, got shape {D.shape}")
    if np.any(D < -1e-9) or not np.all(np.isfinite(D)):
        raise InvalidInputError(f"effects must be finite and non-negative, got {D}")
    D = np.maximum(D, 0.0)
    total = D.sum()
    if total < 1e-12:
        ev.w = np.full(N_GROUPS, 1.0 / N_GROUPS)
        ev.fallback_uniform = True
    else:
        ev.w = D / total
        ev.fallback_uniform = False
    ev.D = D
    return ev


def assign_factors(w) -> FactorMap:
    """Rank groups by descending weight; ties go to the lower group index."""
    w = np.asarray(w.w if isinstance(w, EffectVector) else w, dtype=np.float64)
    order = sorted(range(N_GROUPS), key=lambda k: (-w[k], k))
    return FactorMap(*order)
