"""Synthetic datasets, client partitions and minibatch sampling."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .linalg import gaussian_matrix
from .model import DataBatch

MAX_PARTITION_RETRIES = 100


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature rows plus either class labels (1-D ints) or regression targets (``m x d1``).

    ``w_star`` is the generating weight matrix, kept for building base
    weights and for tests.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    w_star: np.ndarray | None = None

    def __post_init__(self):
        m = self.features.shape[0]
        if m < 1 or len(self.labels) != m:
            raise ValueError(f"{m} feature rows but {len(self.labels)} labels")
        if self.is_classification and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    @property
    def is_classification(self) -> bool:
        return self.labels.ndim == 1

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d2(self) -> int:
        return self.features.shape[1]

    def batch(self, idx=None) -> DataBatch:
        if idx is None:
            return DataBatch(self.features, self.labels)
        idx = np.asarray(idx, dtype=np.intp)
        return DataBatch(self.features[idx], self.labels[idx])

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True)
class Partition:
    shards: tuple[np.ndarray, ...]
    scheme: str

    def __post_init__(self):
        seen: set[int] = set()
        for i, s in enumerate(self.shards):
            if len(s) == 0:
                raise PartitionError(f"client {i} received no samples")
            overlap = seen.intersection(s.tolist())
            if overlap:
                raise PartitionError(f"shards overlap on index {min(overlap)}")
            seen.update(s.tolist())

    @property
    def n(self) -> int:
        return len(self.shards)

    def class_counts(self, ds: Dataset) -> np.ndarray:
        """``n x num_classes`` matrix of per-client label counts."""
        return np.stack([np.bincount(ds.labels[s], minlength=ds.num_classes) for s in self.shards])

    def to_json(self) -> dict:
        return {"scheme": self.scheme, "shards": [s.tolist() for s in self.shards]}

    @classmethod
    def from_json(cls, obj: dict) -> Partition:
        return cls(tuple(np.asarray(s, dtype=np.intp) for s in obj["shards"]), obj["scheme"])


def generate_classification(
    m: int,
    d2: int,
    num_classes: int,
    sigma_noise: float,
    rng: np.random.Generator,
    separation: float = 2.0,
    spread: float = 1.0,
) -> Dataset:
    """Gaussian clusters labelled by a hidden linear model.

    A ground-truth ``W*`` (``num_classes x d2``) is drawn, class ``c``'s
    cluster is centred at ``separation`` times the unit direction of row
    ``c``, and each point's label is ``argmax(W* x + sigma_noise * eps)``.
    With ``sigma_noise = 0`` the labels are linearly separable by ``W*``.
    """
    if m < num_classes:
        raise ValueError(f"need m >= num_classes, got m={m}, num_classes={num_classes}")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be >= 0")
    w_star = gaussian_matrix(num_classes, d2, 1.0 / np.sqrt(d2), rng)
    centres = separation * w_star / np.linalg.norm(w_star, axis=1, keepdims=True)
    cluster = rng.permutation(np.arange(m) % num_classes)
    x = centres[cluster] + spread * rng.standard_normal((m, d2))
    scores = x @ w_star.T
    if sigma_noise > 0:
        scores = scores + sigma_noise * rng.standard_normal(scores.shape)
    labels = np.argmax(scores, axis=1).astype(np.intp)
    return Dataset(x, labels, num_classes, w_star)


def generate_regression(m: int, d2: int, d1: int, sigma_noise: float, rng: np.random.Generator) -> Dataset:
    """Linear targets ``y = W* x + noise`` with standard normal features."""
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be >= 0")
    w_star = gaussian_matrix(d1, d2, 1.0 / np.sqrt(d2), rng)
    x = rng.standard_normal((m, d2))
    y = x @ w_star.T
    if sigma_noise > 0:
        y = y + sigma_noise * rng.standard_normal(y.shape)
    return Dataset(x, y, 0, w_star)


def make_base_weights(w_star: np.ndarray, offset_rank: int, offset_scale: float, rng: np.random.Generator) -> np.ndarray:
    """A "pre-trained" base: ``W*`` minus a random rank-``offset_rank`` shift.

    The shift has Frobenius norm ``offset_scale * ||W*||_F``, so an adapter
    of rank >= ``offset_rank`` can in principle undo it.
    """
    d1, d2 = w_star.shape
    if offset_rank < 1 or offset_scale == 0:
        return w_star.copy()
    u = rng.standard_normal((d1, offset_rank))
    v = rng.standard_normal((offset_rank, d2))
    shift = u @ v
    shift *= offset_scale * np.linalg.norm(w_star) / np.linalg.norm(shift)
    return w_star - shift


def largest_remainder(quotas, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` that differ from ``quotas`` by < 1 each."""
    quotas = np.asarray(quotas, dtype=np.float64)
    base = np.floor(quotas).astype(int)
    short = total - int(base.sum())
    if short > 0:
        # stable sort: ties go to the lower client index
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:short]] += 1
    return base


def partition_iid(ds: Dataset, n: int, rng: np.random.Generator) -> Partition:
    if n < 1 or n > ds.m:
        raise PartitionError(f"cannot split {ds.m} samples among {n} clients")
    perm = rng.permutation(ds.m)
    return Partition(tuple(np.sort(s) for s in np.array_split(perm, n)), "iid")


def normalize_ratio_columns(ratios) -> np.ndarray:
    """Scale each class column so the clients' shares of that class sum to 1."""
    r = np.asarray(ratios, dtype=np.float64)
    col = r.sum(axis=0)
    if np.any(col <= 0):
        raise PartitionError("every class needs a positive total share")
    return r / col


def partition_fixed_ratio(
    ds: Dataset,
    ratios,
    rng: np.random.Generator | None = None,
    normalize: bool = True,
) -> Partition:
    """Deal each class to clients in fixed proportions.

    ``ratios[i][c]`` is client ``i``'s share of class ``c``.  Rows written
    as per-client class mixes (e.g. ``[0.15, 0.85]``, ``[0.85, 0.15]``,
    ``[0.5, 0.5]``) over-allocate each class, so by default columns are
    normalised first.  With ``normalize=False`` every column must sum to at
    most 1; the unallocated part of each class is left out.  Class samples
    are shuffled with ``rng`` (if given) and dealt in contiguous blocks;
    counts use largest-remainder rounding.
    """
    r = np.asarray(ratios, dtype=np.float64)
    if not ds.is_classification:
        raise PartitionError("fixed-ratio partitioning needs class labels")
    if r.ndim != 2 or r.shape[1] != ds.num_classes:
        raise PartitionError(f"ratios must have one row per client and {ds.num_classes} columns, got {r.shape}")
    if np.any(r < 0):
        raise PartitionError("ratios must be nonnegative")
    if normalize:
        r = normalize_ratio_columns(r)
    elif np.any(r.sum(axis=0) > 1 + 1e-9):
        raise PartitionError(f"class shares exceed 1: {r.sum(axis=0).tolist()}")
    shards: list[list[np.ndarray]] = [[] for _ in range(r.shape[0])]
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        if rng is not None:
            idx = rng.permutation(idx)
        quotas = r[:, c] * len(idx)
        total = len(idx) if normalize else int(np.floor(quotas.sum() + 1e-9))
        counts = largest_remainder(quotas, total)
        start = 0
        for i, k in enumerate(counts):
            shards[i].append(idx[start : start + k])
            start += k
    return Partition(tuple(np.sort(np.concatenate(s)).astype(np.intp) for s in shards), "fixed_ratio")


def partition_dirichlet(ds: Dataset, n: int, alpha: float, rng: np.random.Generator) -> Partition:
    """Per-class client proportions drawn from ``Dirichlet(alpha * 1_n)``.

    The whole draw is repeated if some client would end up empty.
    """
    if not alpha > 0:
        raise PartitionError(f"alpha must be positive, got {alpha}")
    if n < 2:
        raise PartitionError(f"need n >= 2 clients, got {n}")
    if not ds.is_classification:
        raise PartitionError("Dirichlet partitioning needs class labels")
    by_class = [rng.permutation(ds.class_indices(c)) for c in range(ds.num_classes)]
    for _ in range(MAX_PARTITION_RETRIES):
        shards: list[list[np.ndarray]] = [[] for _ in range(n)]
        for idx in by_class:
            if len(idx) == 0:
                continue
            props = rng.dirichlet(np.full(n, alpha))
            counts = largest_remainder(props * len(idx), len(idx))
            for i, part in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
                shards[i].append(part)
        sizes = [sum(len(p) for p in s) for s in shards]
        if min(sizes) > 0:
            return Partition(
                tuple(np.sort(np.concatenate(s)).astype(np.intp) for s in shards),
                f"dirichlet({alpha:g})",
            )
    raise PartitionError(f"no partition with non-empty shards after {MAX_PARTITION_RETRIES} draws (alpha={alpha})")


def label_distribution_tv(ds: Dataset, part: Partition) -> np.ndarray:
    """Total-variation distance between each client's label mix and the global one."""
    glob = np.bincount(ds.labels, minlength=ds.num_classes) / ds.m
    counts = part.class_counts(ds)
    local = counts / counts.sum(axis=1, keepdims=True)
    return 0.5 * np.abs(local - glob).sum(axis=1)


def sample_minibatch(ds: Dataset, shard, batch_size: int, rng: np.random.Generator) -> DataBatch:
    """Uniform draw with replacement of ``batch_size`` samples from ``shard``."""
    shard = np.asarray(shard, dtype=np.intp)
    if len(shard) == 0:
        raise ValueError("cannot sample from an empty shard")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return ds.batch(shard[rng.integers(0, len(shard), size=batch_size)])


def write_dataset_csv(ds: Dataset, path, part: Partition | None = None) -> None:
    """One row per sample: features, label column(s), and the owning client (-1 if unassigned)."""
    owner = np.full(ds.m, -1)
    if part is not None:
        for i, s in enumerate(part.shards):
            owner[s] = i
    feat_cols = [f"x{j}" for j in range(ds.d2)]
    if ds.is_classification:
        label_cols = ["label"]
        labels = ds.labels[:, None]
    else:
        label_cols = [f"y{j}" for j in range(ds.labels.shape[1])]
        labels = ds.labels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feat_cols + label_cols + ["client"])
        for row, lab, c in zip(ds.features, labels, owner):
            w.writerow([repr(float(v)) for v in row] + [str(v) if ds.is_classification else repr(float(v)) for v in lab] + [int(c)])


def read_dataset_csv(path, num_classes: int | None = None) -> tuple[Dataset, Partition | None]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    feat = [i for i, h in enumerate(header) if h.startswith("x")]
    x = np.array([[float(r[i]) for i in feat] for r in body])
    if "label" in header:
        k = header.index("label")
        labels = np.array([int(r[k]) for r in body], dtype=np.intp)
        nc = num_classes or int(labels.max()) + 1
    else:
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        labels = np.array([[float(r[i]) for i in ycols] for r in body])
        nc = 0
    ds = Dataset(x, labels, nc)
    owner = np.array([int(r[header.index("client")]) for r in body])
    if np.all(owner < 0):
        return ds, None
    shards = tuple(np.flatnonzero(owner == i) for i in range(owner.max() + 1))
    return ds, Partition(shards, "loaded")


def write_partition_json(part: Partition, path) -> None:
    with open(path, "w") as fh:
        json.dump(part.to_json(), fh)
        fh.write("\n")
