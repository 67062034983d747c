"""Training loop, learning-rate schedule, checkpoints and history files."""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .data import Dataset
from .exceptions import ConfigError, FormatError, NumericalError
from .metric_grouping import MetricParams, renormalize_metric
from .model import AGG_MODES, LossConfig, ModelParams, forward, init_params, loss_and_grads, \
    mean_pool_forward, mean_pool_loss_and_grads
from .numerics import RmspropState, SeededStream, mix_seed, rmsprop_step

logger = logging.getLogger(__name__)

DEFAULT_LR_STEPS = ((1, 50, 1e-5), (51, 75, 5e-6), (76, 100, 1e-6))


def step_schedule(epochs: int):
    """The 1e-5 / 5e-6 / 1e-6 step schedule with breakpoints at 1/2 and 3/4 of the run.

    For 100 epochs this is exactly epochs 1-50, 51-75 and 76-100.
    """
    half, three_q = epochs // 2, (3 * epochs) // 4
    ranges = [(1, half, 1e-5), (half + 1, three_q, 5e-6), (three_q + 1, epochs, 1e-6)]
    return tuple(r for r in ranges if r[0] <= r[1])

MODELS = ("pgcidl", "mean_pool")


@dataclass
class TrainConfig:
    """Hyper-parameters of a training run.

    ``lr_schedule`` holds inclusive ``(first_epoch, last_epoch, lr)`` ranges;
    ``None`` means :func:`step_schedule` stretched to ``epochs``. Setting
    ``lr`` replaces the schedule with a constant rate. ``model``
    selects the full pipeline or the plain mean-pooling baseline.
    """

    epochs: int = 100
    batch_size: int = 2
    gamma: float = 0.1
    seed: int = 0
    lr_schedule: Optional[Tuple[Tuple[int, int, float], ...]] = None
    lr: Optional[float] = None
    rank: Optional[int] = None
    agg_mode: str = "centroid_weighted"
    width: int = 64
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    train_ratio: float = 0.6
    model: str = "pgcidl"

    def __post_init__(self):
        if self.lr_schedule is None:
            self.lr_schedule = step_schedule(max(int(self.epochs), 1))
        self.lr_schedule = tuple((int(a), int(b), float(lr)) for a, b, lr in self.lr_schedule)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.width < 2:
            raise ConfigError("encoder width must be >= 2")
        if self.rank is not None and not 1 <= self.rank <= self.width:
            raise ConfigError(f"rank must lie in 1..{self.width}")
        if self.agg_mode not in AGG_MODES:
            raise ConfigError(f"agg_mode must be one of {AGG_MODES}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigError("gamma must be finite and >= 0")
        if self.lr is not None:
            if not self.lr > 0:
                raise ConfigError("lr must be positive")
            return
        covered = []
        for first, last, lr in self.lr_schedule:
            if first > last or lr <= 0:
                raise ConfigError(f"bad schedule entry {(first, last, lr)}")
            covered.extend(range(first, last + 1))
        if sorted(covered) != list(range(1, self.epochs + 1)):
            raise ConfigError("lr_schedule ranges must cover epochs 1..epochs exactly once")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.gamma, self.agg_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_schedule"] = [list(x) for x in self.lr_schedule]
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**d)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if not 1 <= epoch <= cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside 1..{cfg.epochs}")
    if cfg.lr is not None:
        return cfg.lr
    for first, last, lr in cfg.lr_schedule:
        if first <= epoch <= last:
            return lr
    raise ConfigError(f"no learning rate for epoch {epoch}")


@dataclass
class TrainHistory:
    epoch: List[int] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    mean_d_reg: List[float] = field(default_factory=list)
    degenerate_frac: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "train_acc", "val_acc", "mean_d_reg", "lr", "degenerate_frac"])
            for row in zip(self.epoch, self.loss, self.train_acc, self.val_acc, self.mean_d_reg,
                           self.lr, self.degenerate_frac):
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def predict_proba(params: ModelParams, bag, cfg: TrainConfig) -> np.ndarray:
    if cfg.model == "mean_pool":
        return mean_pool_forward(params, bag)
    return forward(params, bag, cfg.loss_config).probs


def accuracy(params: ModelParams, dataset: Dataset, cfg: TrainConfig) -> float:
    if len(dataset) == 0:
        return float("nan")
    hits = [int(np.argmax(predict_proba(params, b, cfg)) == b.label) for b in dataset.bags]
    return float(np.mean(hits))


def train(cfg: TrainConfig, dataset: Dataset, val: Optional[Dataset] = None,
          params: Optional[ModelParams] = None) -> Tuple[ModelParams, TrainHistory]:
    """Fit the model to ``dataset`` with mini-batch RMSprop.

    Bags are visited in an order drawn from ``(seed, epoch)``; per-bag
    gradients are averaged in visiting order, so the run is bit-reproducible.
    After every step the metric factor is projected back to
    ``||A||_F = sqrt(rank)``.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if params is None:
        params = init_params(dataset.feature_dim, cfg.width, dataset.num_classes, cfg.rank, cfg.seed)
    state = RmspropState(cfg.rms_decay, cfg.rms_epsilon)
    loss_cfg = cfg.loss_config
    history = TrainHistory()
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(cfg, epoch)
        order = SeededStream(mix_seed(cfg.seed, epoch)).permutation(n)
        losses, hits, d_regs, degenerate = [], [], [], []
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            for i in batch:
                bag = dataset.bags[i]
                if cfg.model == "mean_pool":
                    loss, grads, probs = mean_pool_loss_and_grads(params, bag, bag.label)
                    d_regs.append(0.0)
                    degenerate.append(False)
                else:
                    loss, grads, trace = loss_and_grads(params, bag, bag.label, loss_cfg)
                    probs = trace.probs
                    d_regs.append(trace.d_reg)
                    degenerate.append(trace.degenerate)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise NumericalError(f"non-finite loss or gradient on bag {bag.bag_id!r} at epoch {epoch}")
                losses.append(loss)
                hits.append(int(np.argmax(probs) == bag.label))
                if acc is None:
                    acc = {k: g.copy() for k, g in grads.items()}
                else:
                    for k in acc:
                        acc[k] += grads[k]
            acc = {k: g / len(batch) for k, g in acc.items()}
            new, state = rmsprop_step(params.as_dict(), acc, state, lr)
            new["metric"] = renormalize_metric(MetricParams(new["metric"])).A
            params = ModelParams.from_dict(new)
        history.epoch.append(epoch)
        history.loss.append(float(np.mean(losses)))
        history.train_acc.append(float(np.mean(hits)))
        history.val_acc.append(accuracy(params, val, cfg) if val is not None else float("nan"))
        history.mean_d_reg.append(float(np.mean(d_regs)))
        history.degenerate_frac.append(float(np.mean(degenerate)))
        history.lr.append(lr)
        logger.debug("epoch %d loss %.4f train_acc %.3f val_acc %.3f", epoch, history.loss[-1],
                     history.train_acc[-1], history.val_acc[-1])
    return params, history


CKPT_MAGIC = b"PGCK"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sII")
_BLOB_ORDER = ("encoder", "encoder_bias", "head", "head_bias", "metric")


def save_checkpoint(params: ModelParams, cfg: TrainConfig, path, epoch: Optional[int] = None) -> None:
    """Binary checkpoint: magic, version, JSON header length, JSON header, float64 blobs."""
    arrays = params.as_dict()
    header = {
        "dims": {"d_in": params.d_in, "width": params.width},
        "C": params.num_classes,
        "r": params.metric.rank,
        "agg_mode": cfg.agg_mode,
        "gamma": cfg.gamma,
        "seed": cfg.seed,
        "epoch": cfg.epochs if epoch is None else epoch,
        "config": cfg.to_dict(),
        "blobs": [[name, list(arrays[name].shape)] for name in _BLOB_ORDER],
    }
    raw_header = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(raw_header)))
        fh.write(raw_header)
        for name in _BLOB_ORDER:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[ModelParams, TrainConfig]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, hlen = _CKPT_HEAD.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = _CKPT_HEAD.size
    try:
        header = json.loads(raw[offset:offset + hlen].decode())
        cfg = TrainConfig.from_dict(header["config"])
        blobs = header["blobs"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from exc
    offset += hlen
    arrays = {}
    for name, shape in blobs:
        count = int(np.prod(shape))
        if len(raw) < offset + 8 * count:
            raise FormatError(f"{path}: blob {name!r} truncated at offset {len(raw)}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after blobs")
    if set(arrays) != set(_BLOB_ORDER):
        raise FormatError(f"{path}: checkpoint blobs {sorted(arrays)} are incomplete")
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise FormatError(f"{path}: checkpoint contains non-finite parameters")
    return ModelParams.from_dict(arrays), cfg
