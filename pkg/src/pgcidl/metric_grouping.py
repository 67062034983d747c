"""Low-rank Mahalanobis metric ``W = A^T A`` and k-means grouping under it.

Distances under ``W`` equal Euclidean distances after projecting with ``A``,
so grouping runs Lloyd's algorithm on ``Z @ A.T`` directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .exceptions import DegenerateMetricError, DimensionError, GroupingError, InvalidInputError
from .numerics import SeededStream

N_GROUPS = 3


@dataclass
class MetricParams:
    """Factor ``A`` (r x d) of the metric ``W = A^T A``."""

    A: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.ndim != 2:
            raise DimensionError("metric factor A must be 2-D")
        if self.A.shape[0] > self.A.shape[1]:
            raise DimensionError(f"metric rank {self.A.shape[0]} exceeds dimension {self.A.shape[1]}")
        if not np.all(np.isfinite(self.A)):
            raise InvalidInputError("metric factor A has non-finite entries")

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def project(self, Z) -> np.ndarray:
        """Map rows of ``Z`` into the latent subspace."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[-1] != self.dim:
            raise DimensionError(f"expected vectors of length {self.dim}, got {Z.shape[-1]}")
        return Z @ self.A.T


def default_rank(d: int) -> int:
    """Strictly low rank by default: ``min(d - 1, 64)``."""
    return max(1, min(d - 1, 64))


def init_metric(d: int, r: int, stream: SeededStream) -> MetricParams:
    """Gaussian(0, 1/d) entries, rescaled to ``||A||_F = sqrt(r)``."""
    A = stream.draw_gaussian((r, d), std=1.0 / np.sqrt(d))
    return renormalize_metric(MetricParams(A))


def metric_distance(metric: MetricParams, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (metric.dim,) or y.shape != (metric.dim,):
        raise DimensionError(f"metric_distance expects two vectors of length {metric.dim}")
    return float(np.linalg.norm(metric.A @ (x - y)))


def materialize_psd(metric: MetricParams) -> np.ndarray:
    """Return ``W = A^T A``."""
    return metric.A.T @ metric.A


def renormalize_metric(metric: MetricParams) -> MetricParams:
    """Rescale ``A`` to Frobenius norm ``sqrt(rank)``."""
    norm = np.linalg.norm(metric.A)
    if norm == 0.0:
        raise DegenerateMetricError("cannot renormalize a zero metric factor")
    return MetricParams(metric.A * (np.sqrt(metric.rank) / norm))


@dataclass
class GroupingResult:
    assignments: np.ndarray
    centroids: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    degenerate: bool = False

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=N_GROUPS)


def _lex_first(points, candidates):
    # smallest row in lexicographic order among the candidate indices
    sub = points[candidates]
    order = np.lexsort(sub.T[::-1])
    return int(candidates[order[0]])


def _farthest_first(L, k):
    sq_norms = np.einsum("ij,ij->i", L, L)
    first = _lex_first(L, np.flatnonzero(sq_norms == sq_norms.max()))
    centers = [first]
    min_d = np.einsum("ij,ij->i", L - L[first], L - L[first])
    for _ in range(1, k):
        nxt = _lex_first(L, np.flatnonzero(min_d == min_d.max()))
        centers.append(nxt)
        diff = L - L[nxt]
        min_d = np.minimum(min_d, np.einsum("ij,ij->i", diff, diff))
    return L[centers].copy()


def _assign(L, C):
    diff = L[:, None, :] - C[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.argmin(d2, axis=1), d2


def lloyd(L, k=N_GROUPS, max_iter=100) -> GroupingResult:
    """Lloyd iterations on latent points ``L`` with farthest-first seeding.

    Seeding depends only on the point set, never on row order or a random
    seed. Ties in the assignment step go to the lower group index.
    """
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    if n < k:
        raise GroupingError(f"need at least {k} instances to form {k} groups, got {n}")
    C = _farthest_first(L, k)
    labels, d2 = _assign(L, C)
    trace: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        sizes = np.bincount(labels, minlength=k)
        for g in np.flatnonzero(sizes == 0):
            # reseed at the point lying farthest from its own centroid
            own = d2[np.arange(n), labels]
            far = int(np.argmax(own))
            if own[far] <= 0.0:
                continue
            C[g] = L[far]
            labels, d2 = _assign(L, C)
            sizes = np.bincount(labels, minlength=k)
        for g in range(k):
            if sizes[g]:
                C[g] = L[labels == g].mean(axis=0)
        new_labels, d2 = _assign(L, C)
        trace.append(float(d2[np.arange(n), labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    degenerate = bool(np.any(np.bincount(labels, minlength=k) == 0))
    return GroupingResult(labels.astype(np.int64), C, trace, iterations, degenerate)


def kmeans_group(metric: MetricParams, Z, max_iter: int = 100) -> GroupingResult:
    """Partition the rows of ``Z`` into three groups in the latent subspace of ``metric``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionError("kmeans_group expects a 2-D instance matrix")
    if Z.shape[0] < N_GROUPS:
        raise GroupingError(f"need at least {N_GROUPS} instances, got {Z.shape[0]}")
    return lloyd(metric.project(Z), N_GROUPS, max_iter)
