"""Dataset loading (synthetic blobs + CSV) and Dirichlet non-IID
partitioning across clients."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, PartitionError


@dataclass
class Dataset:
    features: np.ndarray  # n x d_raw
    labels: np.ndarray  # n ints in [0, class_count)
    name: str
    class_count: int
    label_mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if n < 1 or self.labels.shape != (n,):
            raise DataError("features/labels size mismatch or empty dataset")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if np.any(self.labels < 0) or np.any(self.labels >= self.class_count):
            raise DataError("labels out of range")

    def __len__(self):
        return self.features.shape[0]


@dataclass
class PartitionSpec:
    clients: int
    alpha: float
    seed: int
    min_samples_per_client: int = 2

    def __post_init__(self):
        if self.clients < 1 or self.alpha <= 0 or self.min_samples_per_client < 1:
            raise PartitionError("invalid partition spec")


def dirichlet_partition(labels, spec: PartitionSpec) -> list[np.ndarray]:
    """Split indices across clients with per-class Dirichlet proportions.

    For every class a proportion vector p ~ Dir(alpha * 1_m) is drawn and
    the class's shuffled indices are split by cumulative proportions.
    Clients left below the minimum shard size are topped up from the
    largest shard, so each client stays trainable even at small alpha.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    m = spec.clients
    if n < m * spec.min_samples_per_client:
        raise PartitionError(
            f"{n} samples cannot cover {m} clients at {spec.min_samples_per_client} each"
        )
    rng = np.random.default_rng(spec.seed)
    if m == 1:
        return [rng.permutation(n)]
    shards: list[list[int]] = [[] for _ in range(m)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = rng.permutation(idx)
        p = rng.dirichlet(np.full(m, spec.alpha))
        cuts = (np.cumsum(p)[:-1] * len(idx)).astype(int)
        for client, chunk in enumerate(np.split(idx, cuts)):
            shards[client].extend(chunk.tolist())
    # Repair pass: move samples from the largest shard to starved clients.
    sizes = [len(s) for s in shards]
    while min(sizes) < spec.min_samples_per_client:
        donor = int(np.argmax(sizes))
        needy = int(np.argmin(sizes))
        if sizes[donor] <= spec.min_samples_per_client:
            raise PartitionError("cannot satisfy min_samples_per_client")
        shards[needy].append(shards[donor].pop())
        sizes = [len(s) for s in shards]
    return [np.array(s, dtype=np.int64) for s in shards]


def heterogeneity(labels, shards, class_count) -> float:
    """Mean L1 distance between client class proportions and the global
    proportions; larger means more skew."""
    labels = np.asarray(labels)
    global_p = np.bincount(labels, minlength=class_count) / len(labels)
    dists = []
    for shard in shards:
        p = np.bincount(labels[shard], minlength=class_count) / max(len(shard), 1)
        dists.append(np.abs(p - global_p).sum())
    return float(np.mean(dists))


def synth_blobs(classes, n, d_raw, sep, noise, seed, name="synth") -> Dataset:
    """Balanced Gaussian blobs with class centers on a random sphere of
    radius ``sep``."""
    if classes < 2 or n < classes:
        raise DataError("need at least 2 classes and n >= classes")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((classes, d_raw))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = sep * dirs
    labels = np.arange(n) % classes
    labels = rng.permutation(labels)
    features = centers[labels] + noise * rng.standard_normal((n, d_raw))
    return Dataset(features=features, labels=labels, name=name, class_count=classes)


def load_csv(path, label_column, has_header=True) -> Dataset:
    """Read a numeric-feature CSV; labels are remapped to 0..K-1.

    ``label_column`` is a column name (header required) or an index.
    """
    rows = []
    header = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if has_header and header is None:
                header = row
                continue
            rows.append((lineno, row))
    if not rows:
        raise DataError(f"{path}: no data rows")
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
    width = len(rows[0][1])
    if not (0 <= label_idx < width):
        raise DataError(f"{path}: label column index {label_idx} out of range")
    raw_labels = []
    features = []
    for lineno, row in rows:
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        raw_labels.append(row[label_idx])
        try:
            features.append(
                [float(v) for i, v in enumerate(row) if i != label_idx]
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric feature: {exc}") from exc
    uniq = sorted(set(raw_labels))
    mapping = {lab: i for i, lab in enumerate(uniq)}
    labels = np.array([mapping[lab] for lab in raw_labels])
    return Dataset(
        features=np.array(features),
        labels=labels,
        name=str(path),
        class_count=len(uniq),
        label_mapping=mapping,
    )


def save_csv(dataset: Dataset, path):
    """Write features plus a final ``label`` column; round-trips with
    load_csv up to float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        d = dataset.features.shape[1]
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
