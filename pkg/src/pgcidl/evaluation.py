"""Classification metrics, factor recovery and the brute-force entropy oracle."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .exceptions import DimensionError, InvalidInputError, UndefinedMetricError
from .model import ForwardTrace, ModelParams, forward, mean_pool_forward
from .train import TrainConfig

MAX_JOINT_ENTRIES = 10 ** 7


def confusion_matrix(preds, labels, num_classes: Optional[int] = None) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise DimensionError("preds and labels differ in length")
    if num_classes is None:
        num_classes = int(max(preds.max(initial=0), labels.max(initial=0))) + 1
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def per_class_prf(cm: np.ndarray):
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def weighted_f1(preds, labels, num_classes: Optional[int] = None) -> float:
    """Support-weighted mean of per-class F1; classes with 0/0 get F1 = 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise InvalidInputError("weighted_f1 needs at least one sample")
    cm = confusion_matrix(preds, labels, num_classes)
    _, _, f1 = per_class_prf(cm)
    support = cm.sum(axis=1)
    return float(np.sum(f1 * support) / support.sum())


def _binary_auc(scores, positive) -> float:
    # Mann-Whitney U / (n_pos * n_neg), ties share rank
    ranks = rankdata(scores)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_ovr(scores, labels, return_skipped: bool = False):
    """Macro one-vs-rest ROC AUC from rank statistics.

    ``scores`` is either ``(N, C)`` class probabilities or, for a binary
    problem, a length-``N`` score of the positive class. Classes without both
    positive and negative samples are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim == 1:
        scores = np.column_stack([1.0 - scores, scores])
    if scores.shape[0] != labels.shape[0]:
        raise DimensionError("scores and labels differ in length")
    aucs: List[float] = []
    skipped: List[int] = []
    for c in range(scores.shape[1]):
        positive = labels == c
        if positive.all() or not positive.any():
            skipped.append(c)
            continue
        aucs.append(_binary_auc(scores[:, c], positive))
    if not aucs:
        raise UndefinedMetricError("AUC is undefined: no class has both positives and negatives")
    value = float(np.mean(aucs))
    return (value, skipped) if return_skipped else value


def factor_recovery(traces: Sequence[ForwardTrace], dataset: Dataset) -> Optional[float]:
    """Mean per-bag fraction of instances whose TC/ME/BG label matches the planted one.

    Returns ``None`` when any bag lacks ground-truth factors.
    """
    if len(traces) != len(dataset):
        raise DimensionError("one trace per bag is required")
    scores = []
    for trace, bag in zip(traces, dataset.bags):
        if bag.truth_factors is None:
            return None
        scores.append(np.mean(trace.instance_factors() == bag.truth_factors))
    return float(np.mean(scores)) if scores else None


@dataclass
class EvalReport:
    accuracy: float
    weighted_f1: float
    auc_macro_ovr: Optional[float]
    auc_skipped_classes: List[int]
    precision: List[float]
    recall: List[float]
    f1: List[float]
    confusion: List[List[int]]
    factor_recovery: Optional[float]
    degenerate_bag_fraction: float
    num_bags: int
    auc_definition: str = "macro one-vs-rest Mann-Whitney"
    rows: List[dict] = field(default_factory=list, repr=False)

    def to_dict(self, include_rows: bool = False) -> dict:
        d = asdict(self)
        if not include_rows:
            d.pop("rows")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_rows_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bag_id", "label", "pred", "probs", "w", "tc", "me", "bg"])
            for r in self.rows:
                writer.writerow([r["bag_id"], r["label"], r["pred"], " ".join(map(repr, r["probs"])),
                                 " ".join(map(repr, r["w"])), r["tc"], r["me"], r["bg"]])


def evaluate(params: ModelParams, dataset: Dataset, cfg: Optional[TrainConfig] = None) -> EvalReport:
    cfg = cfg or TrainConfig()
    if dataset.feature_dim != params.d_in:
        raise DimensionError(f"dataset feature_dim {dataset.feature_dim} != model input dim {params.d_in}")
    traces: List[ForwardTrace] = []
    probs = []
    rows = []
    for bag in dataset.bags:
        if cfg.model == "mean_pool":
            p = mean_pool_forward(params, bag)
            rows.append({"bag_id": bag.bag_id, "label": bag.label, "pred": int(np.argmax(p)),
                         "probs": p.tolist(), "w": [], "tc": None, "me": None, "bg": None})
        else:
            t = forward(params, bag, cfg.loss_config)
            traces.append(t)
            p = t.probs
            rows.append({"bag_id": bag.bag_id, "label": bag.label, "pred": int(np.argmax(p)),
                         "probs": p.tolist(), "w": t.weights.tolist(), "tc": t.factors.tc,
                         "me": t.factors.me, "bg": t.factors.bg})
        probs.append(p)
    probs = np.array(probs).reshape(len(dataset), params.num_classes)
    labels = dataset.labels
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(preds, labels, params.num_classes)
    precision, recall, f1 = per_class_prf(cm)
    try:
        auc, skipped = auc_ovr(probs, labels, return_skipped=True)
    except UndefinedMetricError:
        auc, skipped = None, list(range(params.num_classes))
    recovery = factor_recovery(traces, dataset) if traces else None
    degenerate = float(np.mean([t.degenerate for t in traces])) if traces else 0.0
    return EvalReport(
        accuracy=float(np.trace(cm) / cm.sum()) if cm.sum() else float("nan"),
        weighted_f1=weighted_f1(preds, labels, params.num_classes) if len(labels) else float("nan"),
        auc_macro_ovr=auc,
        auc_skipped_classes=skipped,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        confusion=cm.tolist(),
        factor_recovery=recovery,
        degenerate_bag_fraction=degenerate,
        num_bags=len(dataset),
        rows=rows,
    )


@dataclass
class JointDistribution:
    """Probability table over the product of finite variables (axis i = variable i)."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.size > MAX_JOINT_ENTRIES:
            raise InvalidInputError(f"joint table has {self.table.size} entries; the oracle caps at {MAX_JOINT_ENTRIES}")
        if np.any(self.table < 0) or abs(self.table.sum() - 1.0) > 1e-12:
            raise InvalidInputError("joint table must be non-negative and sum to 1")

    @property
    def num_vars(self) -> int:
        return self.table.ndim

    def marginal(self, i: int) -> np.ndarray:
        axes = tuple(a for a in range(self.num_vars) if a != i)
        return self.table.sum(axis=axes)


def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)) / np.log(2.0))


@dataclass
class EntropyGap:
    H_joint: float
    marginals: List[float]
    sum_marginal_H: float
    weighted_H_star: Optional[float] = None


def entropy_gap(joint: JointDistribution, partition: Optional[Sequence[int]] = None,
                weights: Optional[Sequence[float]] = None) -> EntropyGap:
    """Joint entropy, marginal entropies and the effect-weighted entropy (all in bits).

    ``partition[i]`` names the group (0, 1, 2) of variable ``i``; with
    ``weights`` the weighted entropy is ``sum_j w_j * sum_{i in group j} H(x_i)``.
    Subadditivity ``H_joint <= sum H(x_i)`` is asserted.
    """
    h_joint = entropy_bits(joint.table)
    marginals = [entropy_bits(joint.marginal(i)) for i in range(joint.num_vars)]
    total = float(sum(marginals))
    if h_joint > total + 1e-9:
        raise AssertionError(f"subadditivity violated: H_joint={h_joint} > {total}")
    h_star = None
    if weights is not None:
        if partition is None or len(partition) != joint.num_vars:
            raise DimensionError("partition must assign a group to every variable")
        w = np.asarray(weights, dtype=np.float64)
        h_star = float(sum(w[g] * marginals[i] for i, g in enumerate(partition)))
    return EntropyGap(h_joint, marginals, total, h_star)


def brute_force_joint_entropy(joint: JointDistribution) -> float:
    """Entropy by explicit enumeration of every cell; an independent check on :func:`entropy_bits`."""
    h = 0.0
    for idx in itertools.product(*(range(s) for s in joint.table.shape)):
        p = joint.table[idx]
        if p > 0:
            h -= p * np.log2(p)
    return float(h)
