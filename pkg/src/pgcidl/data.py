"""Bags, datasets, the planted-factor synthetic generator and file formats.

Bag file layout (little-endian)::

    b"PGBF"            magic
    u32 version        currently 1
    u32 n_instances
    u32 d_in
    u32 label
    u8  has_truth      0 or 1
    u8[n_instances]    factor codes (0=TC, 1=ME, 2=BG), present iff has_truth
    f64[n_instances * d_in]  features, row-major
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError, FormatError, InvalidInputError, SplitError
from .numerics import SeededStream

FACTOR_NAMES = ("TC", "ME", "BG")
TC, ME, BG = 0, 1, 2

BAG_MAGIC = b"PGBF"
BAG_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB")


@dataclass
class Bag:
    """One weakly labelled sample: an unordered set of instance features."""

    features: np.ndarray
    label: int
    bag_id: str = ""
    truth_factors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimensionError(f"bag {self.bag_id!r}: features must be 2-D, got ndim={self.features.ndim}")
        if self.features.shape[0] < 3:
            raise InvalidInputError(f"bag {self.bag_id!r}: needs at least 3 instances, got {self.features.shape[0]}")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError(f"bag {self.bag_id!r}: non-finite feature values")
        self.label = int(self.label)
        if self.label < 0:
            raise InvalidInputError(f"bag {self.bag_id!r}: negative label")
        if self.truth_factors is not None:
            tf = np.asarray(self.truth_factors, dtype=np.uint8)
            if tf.shape != (self.features.shape[0],) or np.any(tf > BG):
                raise InvalidInputError(f"bag {self.bag_id!r}: truth factors must be one code in 0..2 per instance")
            self.truth_factors = tf

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Dataset:
    bags: List[Bag]
    num_classes: int
    feature_dim: int
    name: str = "dataset"

    def __post_init__(self):
        seen = set()
        for bag in self.bags:
            if bag.feature_dim != self.feature_dim:
                raise DimensionError(
                    f"bag {bag.bag_id!r} has feature_dim {bag.feature_dim}, dataset expects {self.feature_dim}")
            if bag.label >= self.num_classes:
                raise InvalidInputError(f"bag {bag.bag_id!r}: label {bag.label} >= num_classes {self.num_classes}")
            if bag.bag_id in seen:
                raise InvalidInputError(f"duplicate bag_id {bag.bag_id!r}")
            seen.add(bag.bag_id)

    def __len__(self):
        return len(self.bags)

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=np.int64)

    def subset(self, indices, name=None) -> "Dataset":
        return Dataset([self.bags[i] for i in indices], self.num_classes, self.feature_dim,
                       name or self.name)


@dataclass
class SynthConfig:
    num_bags: int = 120
    instances_per_bag: int = 30
    d_in: int = 16
    num_classes: int = 3
    fractions: Tuple[float, float, float] = (0.2, 0.3, 0.5)
    separation: float = 4.0
    me_leak: float = 0.15
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3:
            raise ConfigError("fractions must have three entries (tc, me, bg)")
        if abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) <= 0:
            raise ConfigError(f"fractions must be positive and sum to 1, got {self.fractions}")
        if self.num_bags < 1 or self.instances_per_bag < 3:
            raise ConfigError("need num_bags >= 1 and instances_per_bag >= 3")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.d_in < self.num_classes + 1:
            raise ConfigError("d_in must exceed num_classes (one axis per class mean plus one for ME)")
        if self.separation < 0:
            raise ConfigError("separation must be >= 0")
        if not 0.0 <= self.me_leak <= 1.0:
            raise ConfigError("me_leak must lie in [0, 1]")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be positive")

    def factor_counts(self) -> Tuple[int, int, int]:
        n = self.instances_per_bag
        n_tc = int(round(self.fractions[0] * n))
        n_me = int(round(self.fractions[1] * n))
        n_bg = n - n_tc - n_me
        if min(n_tc, n_me, n_bg) <= 0:
            raise ConfigError(f"fractions {self.fractions} leave an empty factor with {n} instances per bag")
        return n_tc, n_me, n_bg


def class_means(cfg: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(tumour means, shared microenvironment mean)`` for a config.

    Class ``c`` puts its tumour mean on axis ``c`` at distance
    ``separation * noise_std``; the microenvironment centre sits on axis
    ``num_classes`` at the same distance.
    """
    scale = cfg.separation * cfg.noise_std
    mu = np.zeros((cfg.num_classes, cfg.d_in))
    mu[np.arange(cfg.num_classes), np.arange(cfg.num_classes)] = scale
    nu = np.zeros(cfg.d_in)
    nu[cfg.num_classes] = scale
    return mu, nu


def generate_synthetic(cfg: SynthConfig, name: str = "synthetic") -> Dataset:
    """Draw a dataset whose class signal lives in the tumour instances."""
    n_tc, n_me, n_bg = cfg.factor_counts()
    stream = SeededStream(cfg.seed)
    mu, nu = class_means(cfg)
    mu_bar = mu.mean(axis=0)
    factors = np.repeat(np.array([TC, ME, BG], dtype=np.uint8), [n_tc, n_me, n_bg])
    sd = cfg.noise_std
    bags = []
    for i in range(cfg.num_bags):
        label = i % cfg.num_classes
        tc = mu[label] + sd * stream.draw_gaussian((n_tc, cfg.d_in))
        me = nu + cfg.me_leak * (mu[label] - mu_bar) + sd * stream.draw_gaussian((n_me, cfg.d_in))
        bg = sd * stream.draw_gaussian((n_bg, cfg.d_in))
        order = stream.permutation(cfg.instances_per_bag)
        feats = np.vstack([tc, me, bg])[order]
        bags.append(Bag(feats, label, f"bag_{i:05d}", factors[order]))
    return Dataset(bags, cfg.num_classes, cfg.d_in, name)


def write_bag_file(bag: Bag, path) -> None:
    has_truth = bag.truth_factors is not None
    header = _HEADER.pack(BAG_MAGIC, BAG_VERSION, bag.n_instances, bag.feature_dim, bag.label, int(has_truth))
    with open(path, "wb") as fh:
        fh.write(header)
        if has_truth:
            fh.write(bag.truth_factors.astype(np.uint8).tobytes())
        fh.write(bag.features.astype("<f8").tobytes())


def load_bag_file(path, bag_id: Optional[str] = None) -> Bag:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, version, n, d, label, has_truth = _HEADER.unpack_from(raw, 0)
    if magic != BAG_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != BAG_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if has_truth not in (0, 1):
        raise FormatError(f"{path}: truth flag {has_truth} at offset 20 is not 0/1")
    offset = _HEADER.size
    truth = None
    if has_truth:
        if len(raw) < offset + n:
            raise FormatError(f"{path}: truncated factor codes at offset {len(raw)}")
        truth = np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset).copy()
        if np.any(truth > BG):
            bad = int(np.argmax(truth > BG))
            raise FormatError(f"{path}: invalid factor code at offset {offset + bad}")
        offset += n
    expected = n * d * 8
    if len(raw) - offset != expected:
        raise FormatError(
            f"{path}: payload at offset {offset} has {len(raw) - offset} bytes, expected {expected}")
    feats = np.frombuffer(raw, dtype="<f8", count=n * d, offset=offset).reshape(n, d).astype(np.float64)
    if not np.all(np.isfinite(feats)):
        bad = int(np.argmax(~np.isfinite(feats.ravel())))
        raise FormatError(f"{path}: non-finite value at offset {offset + 8 * bad}")
    if bag_id is None:
        bag_id = Path(path).stem
    try:
        return Bag(feats, label, bag_id, truth)
    except InvalidInputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_csv_bag(path, label: int, bag_id: Optional[str] = None) -> Bag:
    """One instance per row; a non-numeric first row is treated as a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 0:
                    continue
                raise FormatError(f"{path}: non-numeric value on line {lineno + 1}")
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: empty file or ragged rows")
    try:
        return Bag(np.array(rows), label, bag_id or Path(path).stem)
    except InvalidInputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


DATASET_MANIFEST = "dataset.json"


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ``dataset.json`` plus one ``bags/<id>.pgbf`` per bag."""
    directory = Path(directory)
    (directory / "bags").mkdir(parents=True, exist_ok=True)
    entries = []
    for bag in ds.bags:
        rel = f"bags/{bag.bag_id}.pgbf"
        write_bag_file(bag, directory / rel)
        entries.append({"id": bag.bag_id, "path": rel, "label": bag.label})
    manifest = {"name": ds.name, "num_classes": ds.num_classes, "feature_dim": ds.feature_dim,
                "bags": entries}
    path = directory / DATASET_MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_dataset(path) -> Dataset:
    """Load a dataset from a manifest file or a directory containing one."""
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_MANIFEST
    try:
        manifest = json.loads(path.read_text())
        entries = manifest["bags"]
        num_classes = int(manifest["num_classes"])
        feature_dim = int(manifest["feature_dim"])
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid dataset manifest ({exc})") from exc
    bags = []
    for entry in entries:
        bag_path = path.parent / entry["path"]
        label = int(entry["label"])
        if bag_path.suffix.lower() == ".csv":
            bag = load_csv_bag(bag_path, label, entry["id"])
        else:
            bag = load_bag_file(bag_path, entry["id"])
            if bag.label != label:
                raise FormatError(f"{bag_path}: label {bag.label} disagrees with manifest label {label}")
        bags.append(bag)
    return Dataset(bags, num_classes, feature_dim, manifest.get("name", path.parent.name))


def split_dataset(ds: Dataset, train_ratio: float = 0.6, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Stratified, seeded train/validation partition.

    Each class contributes ``round(train_ratio * n_c)`` bags to training
    (clipped so both sides get at least one bag). Original bag order is kept
    within each side.
    """
    if not 0.0 < train_ratio < 1.0:
        raise SplitError("train_ratio must lie strictly between 0 and 1")
    labels = ds.labels
    stream = SeededStream(seed)
    train_idx: List[int] = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        if members.size < 2:
            raise SplitError(f"class {c} has {members.size} bag(s); need at least 2 to split")
        n_train = min(max(int(round(train_ratio * members.size)), 1), members.size - 1)
        train_idx.extend(members[stream.permutation(members.size)[:n_train]].tolist())
    train_set = set(train_idx)
    tr = sorted(train_set)
    va = [i for i in range(len(ds)) if i not in train_set]
    return ds.subset(tr, f"{ds.name}-train"), ds.subset(va, f"{ds.name}-val")
