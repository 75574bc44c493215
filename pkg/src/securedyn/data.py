"""Datasets, the synthetic traffic generator and client partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BENIGN = 0

# Sample counts per category; class 0 is always benign.
MINI_NBAIOT_COUNTS = {
    "Benign": 90_000,
    "Mirai-Scan": 7_000, "Mirai-UDP": 7_000, "Mirai-UDPplain": 7_000,
    "Mirai-Syn": 7_000, "Mirai-Ack": 7_000,
    "BASHLITE-Scan": 9_000, "BASHLITE-Junk": 9_000, "BASHLITE-UDP": 9_000,
    "BASHLITE-TCP": 9_000, "BASHLITE-Combo": 9_000,
}
TON_IOT_TRAIN_COUNTS = {
    "Normal": 245_000, "Scanning": 20_000, "DoS": 20_000, "DDoS": 20_000,
    "Ransomware": 16_030, "Backdoor": 20_000, "Injection": 20_000,
    "XSS": 13_844, "Password": 20_000, "MITM": 593,
}
PRESETS = {"mini-nbaiot": MINI_NBAIOT_COUNTS, "ton-iot": TON_IOT_TRAIN_COUNTS}
PRESET_FEATURES = {"mini-nbaiot": 115, "ton-iot": 46}


class DataError(ValueError):
    pass


class InsufficientSamples(DataError):
    pass


class ParseError(DataError):
    pass


class UnknownLabel(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise DataError("feature and label row counts differ")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label index out of range")
        if not np.all(np.isfinite(self.features)):
            raise DataError("non-finite feature values")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_names)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, np.asarray(labels, dtype=np.int64), self.class_names)

    def xy(self):
        return self.features, self.labels

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def zscore(features: np.ndarray) -> np.ndarray:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0] = 1.0
    return (features - mean) / std


def load_csv(path, label_column: str, normalize: bool = True, class_names=None) -> Dataset:
    """Read a header-row CSV with numeric features and one label column.

    Labels may be integers or strings.  String labels are mapped in order of
    ``class_names`` if given, otherwise sorted with a benign-looking name
    ("benign"/"normal", case-insensitive) forced to index 0.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise UnknownLabel(f"{path}: unknown label column {label_column!r}")
        li = header.index(label_column)
        rows, raw_labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{rowno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for ci, cell in enumerate(row):
                if ci == li:
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}:{rowno}: column {header[ci]!r}: not a number: {cell!r}"
                    ) from None
            rows.append(vals)
            raw_labels.append(row[li].strip())

    if class_names is None:
        try:
            ints = [int(v) for v in raw_labels]
            class_names = tuple(str(i) for i in range(max(ints, default=0) + 1))
            labels = np.array(ints, dtype=np.int64)
        except ValueError:
            names = sorted(set(raw_labels), key=lambda s: (s.lower() not in ("benign", "normal"), s))
            class_names = tuple(names)
            labels = np.array([class_names.index(v) for v in raw_labels], dtype=np.int64)
    else:
        class_names = tuple(class_names)
        lookup = {name: i for i, name in enumerate(class_names)}
        try:
            labels = np.array([lookup[v] if v in lookup else int(v) for v in raw_labels], dtype=np.int64)
        except ValueError as exc:
            raise UnknownLabel(f"{path}: unknown label value ({exc})") from None

    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    if normalize and len(rows):
        features = zscore(features)
    return Dataset(features, labels, class_names)


def synth_generate(counts, d: int, separation: float, seed=None, normalize: bool = True) -> Dataset:
    """Unit-variance Gaussian blobs, one per class.

    Class means sit on mutually orthogonal random directions, scaled so every
    pair of means is ``separation`` apart.
    """
    counts = list(counts)
    if d < 2 or d < len(counts):
        raise DataError("need d >= max(2, number of classes)")
    if any(c <= 0 for c in counts):
        raise DataError("class counts must be positive")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(d, d)))
    means = basis[:, :len(counts)].T * (separation / math.sqrt(2))
    feats = np.concatenate([rng.normal(size=(c, d)) + means[k] for k, c in enumerate(counts)])
    labels = np.repeat(np.arange(len(counts)), counts)
    order = rng.permutation(len(labels))
    feats, labels = feats[order], labels[order]
    if normalize:
        feats = zscore(feats)
    names = ("benign",) + tuple(f"attack{i}" for i in range(1, len(counts)))
    return Dataset(feats, labels.astype(np.int64), names)


def synth_preset(name: str, total: int, d: int | None = None, separation: float = 6.0, seed=None) -> Dataset:
    """Synthetic stand-in shaped like a named dataset's class mix, scaled to ``total`` rows."""
    table = PRESETS[name]
    weights = np.array(list(table.values()), dtype=np.float64)
    counts = np.maximum(1, np.round(weights / weights.sum() * total)).astype(int)
    ds = synth_generate(counts, d or PRESET_FEATURES[name], separation, seed)
    return Dataset(ds.features, ds.labels, tuple(table))


def train_test_split(ds: Dataset, test_fraction: float = 0.3, seed=None) -> tuple[Dataset, Dataset]:
    """Stratified split; each class contributes round(test_fraction * count) test rows."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        k = int(round(test_fraction * len(idx)))
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(test_idx)))


def to_binary(ds: Dataset) -> Dataset:
    return Dataset(ds.features, (ds.labels != BENIGN).astype(np.int64), ("benign", "attack"))


# Partitioning

IID = "iid"
DIRICHLET = "dirichlet"
BENIGN_ATTACK_SPLIT = "benign-attack"
SCENARIOS = (IID, DIRICHLET, BENIGN_ATTACK_SPLIT)


@dataclass(frozen=True)
class PartitionPlan:
    scenario: str = IID
    clients: int = 20
    eta: float = 0.1
    samples_per_client: int = 1000
    benign_samples: int = 500
    attack_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.clients < 2:
            raise DataError("need at least 2 clients")
        if self.scenario == DIRICHLET and not self.eta > 0:
            raise DataError("Dirichlet eta must be positive")

    def shard_sizes(self) -> list[int]:
        if self.scenario == BENIGN_ATTACK_SPLIT:
            nb = math.ceil(self.clients / 2)
            return [self.benign_samples] * nb + [self.attack_samples] * (self.clients - nb)
        return [self.samples_per_client] * self.clients


@dataclass
class _Pool:
    """Per-class index queues; draws are without replacement."""

    by_class: list[np.ndarray]
    cursor: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.cursor = [0] * len(self.by_class)

    def left(self, c: int) -> int:
        return len(self.by_class[c]) - self.cursor[c]

    def take(self, c: int, k: int) -> np.ndarray:
        if k > self.left(c):
            raise InsufficientSamples(f"class {c}: need {k} more rows, only {self.left(c)} left")
        out = self.by_class[c][self.cursor[c]:self.cursor[c] + k]
        self.cursor[c] += k
        return out


def _largest_remainder(props: np.ndarray, total: int) -> np.ndarray:
    raw = props * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_indices(ds: Dataset, plan: PartitionPlan) -> list[np.ndarray]:
    """Row indices of ``ds`` assigned to each client."""
    rng = np.random.default_rng(plan.seed)
    pool = _Pool([rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.num_classes)])
    shards: list[np.ndarray] = []

    if plan.scenario == IID:
        ratio = ds.class_counts() / len(ds)
        for _ in range(plan.clients):
            counts = _largest_remainder(ratio, plan.samples_per_client)
            shards.append(np.concatenate([pool.take(c, k) for c, k in enumerate(counts)]))

    elif plan.scenario == DIRICHLET:
        for _ in range(plan.clients):
            props = rng.dirichlet(np.full(ds.num_classes, plan.eta))
            counts = _largest_remainder(props, plan.samples_per_client)
            shards.append(np.concatenate([pool.take(c, k) for c, k in enumerate(counts)]))

    else:
        sizes = plan.shard_sizes()
        nb = math.ceil(plan.clients / 2)
        attack_classes = [c for c in range(ds.num_classes) if c != BENIGN]
        attack_total = sum(pool.left(c) for c in attack_classes)
        for i, size in enumerate(sizes):
            if i < nb:
                shards.append(pool.take(BENIGN, size))
            else:
                ratio = np.array([pool.by_class[c].size for c in attack_classes], dtype=float)
                if attack_total == 0:
                    raise InsufficientSamples("no attack rows to assign")
                counts = _largest_remainder(ratio / ratio.sum(), size)
                shards.append(np.concatenate([pool.take(c, k) for c, k in zip(attack_classes, counts)]))

    return [rng.permutation(idx) for idx in shards]


def partition(ds: Dataset, plan: PartitionPlan) -> list[Dataset]:
    return [ds.subset(idx) for idx in partition_indices(ds, plan)]


def class_histograms(shards: list[Dataset]) -> np.ndarray:
    return np.stack([s.class_counts() for s in shards])
