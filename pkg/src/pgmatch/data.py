"""Synthetic datasets, CSV I/O, noise injection and partitioning."""
import csv
from dataclasses import dataclass, replace

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Struct-of-arrays dataset.

    Row ``i`` is one example: ``X[i]`` features, ``y[i]`` class label,
    ``cost[i]`` a nonnegative size proxy and ``noisy[i]`` the corruption flag.
    """
    X: np.ndarray
    y: np.ndarray
    cost: np.ndarray
    noisy: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = len(self.y)
        if n == 0:
            raise DatasetError("empty dataset")
        if self.X.ndim != 2 or self.X.shape[0] != n or len(self.cost) != n or len(self.noisy) != n:
            raise DatasetError("inconsistent column lengths")
        if self.num_classes < 2:
            raise DatasetError("classes must be >= 2")
        if self.y.min() < 0 or self.y.max() >= self.num_classes:
            raise DatasetError("label out of range")
        if np.any(self.cost < 0):
            raise DatasetError("negative cost")
        if not np.all(np.isfinite(self.X)):
            raise DatasetError("non-finite features")

    def __len__(self):
        return len(self.y)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.cost, other.cost)
                and np.array_equal(self.noisy, other.noisy))

    @property
    def dim(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.cost[idx], self.noisy[idx], self.num_classes)

    def summary(self):
        return {"n": len(self), "dim": self.dim, "classes": self.num_classes,
                "noisy": int(self.noisy.sum())}


def make_dataset(X, y, num_classes, cost=None, noisy=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    cost = np.linalg.norm(X, axis=1) if cost is None else np.asarray(cost, dtype=np.float64)
    noisy = np.zeros(len(y), dtype=bool) if noisy is None else np.asarray(noisy, dtype=bool)
    return Dataset(X, y, cost, noisy, int(num_classes))


def _class_centers(dim, classes, separation, rng):
    # pairwise center distance equals `separation` when classes <= dim
    if classes <= dim:
        centers = np.zeros((classes, dim))
        centers[np.arange(classes), np.arange(classes)] = 1.0
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        centers = centers @ basis.T
    else:
        centers = rng.normal(size=(classes, dim))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return centers * (separation / np.sqrt(2.0))


def generate_synthetic(n, dim, classes, separation, seed, centers_seed=None):
    """Gaussian class blobs with unit covariance.

    Classes are balanced to within one example.  ``cost`` is the feature L2
    norm.  ``centers_seed`` lets train/val/test splits share class centers
    while drawing independent samples.
    """
    if n < 1 or dim < 1 or classes < 1:
        raise DatasetError("n, dim and classes must be positive")
    if classes < 2:
        raise DatasetError("classes must be >= 2")
    if n < classes:
        raise DatasetError("n must be >= classes")
    crng = np.random.default_rng(seed if centers_seed is None else centers_seed)
    centers = _class_centers(dim, classes, float(separation), crng)
    rng = np.random.default_rng([seed, 1])
    y = rng.permutation(np.arange(n) % classes)
    X = centers[y] + rng.normal(size=(n, dim))
    return make_dataset(X, y, classes)


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def inject_noise(ds, fraction, mode="label_flip", seed=0, sigma=1.0):
    """Corrupt exactly ``round(fraction * N)`` examples and flag them."""
    if not 0.0 <= fraction <= 1.0:
        raise DatasetError("noise fraction must lie in [0, 1]")
    if mode not in ("label_flip", "feature_gauss"):
        raise DatasetError(f"unknown noise mode {mode!r}")
    n = len(ds)
    m = _round_half_up(fraction * n)
    if m == 0:
        return ds
    rng = np.random.default_rng([seed, 2])
    idx = np.sort(rng.choice(n, size=m, replace=False))
    X, y, noisy = ds.X.copy(), ds.y.copy(), ds.noisy.copy()
    if mode == "label_flip":
        y[idx] = (y[idx] + rng.integers(1, ds.num_classes, size=m)) % ds.num_classes
    else:
        X[idx] += rng.normal(0.0, sigma, size=(m, ds.dim))
    noisy[idx] = True
    cost = ds.cost if mode == "label_flip" else np.linalg.norm(X, axis=1)
    return replace(ds, X=X, y=y, noisy=noisy, cost=cost)


@dataclass(frozen=True)
class Partitioning:
    D: int
    assignment: np.ndarray

    def members(self, p):
        return np.flatnonzero(self.assignment == p)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.D)


def partition(n_or_ds, D, strategy="contiguous", seed=0):
    """Balanced split into ``D`` parts; the first ``N mod D`` get one extra."""
    n = n_or_ds if isinstance(n_or_ds, (int, np.integer)) else len(n_or_ds)
    if D < 1 or D > n:
        raise DatasetError(f"partitions must satisfy 1 <= D <= N (D={D}, N={n})")
    base, extra = divmod(n, D)
    sizes = np.full(D, base)
    sizes[:extra] += 1
    labels = np.repeat(np.arange(D), sizes)
    if strategy == "contiguous":
        assignment = labels
    elif strategy == "shuffled":
        perm = np.random.default_rng([seed, 3]).permutation(n)
        assignment = np.empty(n, dtype=np.int64)
        assignment[perm] = labels
    else:
        raise DatasetError(f"unknown partition strategy {strategy!r}")
    return Partitioning(D, assignment.astype(np.int64))


def save_csv(ds, path):
    d = ds.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(d)] + ["label", "cost", "noisy"])
        for i in range(len(ds)):
            w.writerow([f"{v:.17g}" for v in ds.X[i]]
                       + [int(ds.y[i]), f"{ds.cost[i]:.17g}", int(ds.noisy[i])])


def load_csv(path, num_classes=None):
    """Read a dataset written by :func:`save_csv`.

    Without ``num_classes`` the class count is ``max(label) + 1``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError("empty dataset")
    header = rows[0]
    feats = [h for h in header if h.startswith("f")]
    d = len(feats)
    expected = [f"f{j}" for j in range(d)] + ["label", "cost", "noisy"]
    if header != expected:
        missing = [c for c in ("label", "cost", "noisy") if c not in header]
        what = f"missing column(s) {missing}" if missing else f"bad header {header}"
        raise DatasetError(f"line 1: {what}")
    if d == 0:
        raise DatasetError("line 1: no feature columns")
    body = rows[1:]
    if not body:
        raise DatasetError("empty dataset")
    X = np.empty((len(body), d))
    y = np.empty(len(body), dtype=np.int64)
    cost = np.empty(len(body))
    noisy = np.empty(len(body), dtype=bool)
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != d + 3:
            raise DatasetError(f"line {line}: expected {d + 3} fields, got {len(row)}")
        try:
            X[i] = [float(v) for v in row[:d]]
            y[i] = int(row[d])
            cost[i] = float(row[d + 1])
            flag = int(row[d + 2])
        except ValueError as exc:
            raise DatasetError(f"line {line}: {exc}") from None
        if flag not in (0, 1):
            raise DatasetError(f"line {line}: noisy must be 0 or 1")
        noisy[i] = bool(flag)
        if not np.all(np.isfinite(X[i])) or not np.isfinite(cost[i]) or cost[i] < 0:
            raise DatasetError(f"line {line}: non-finite feature or invalid cost")
        if y[i] < 0 or (num_classes is not None and y[i] >= num_classes):
            raise DatasetError(f"line {line}: label {y[i]} out of range")
    C = int(num_classes) if num_classes is not None else int(y.max()) + 1
    return Dataset(X, y, cost, noisy, max(C, 2))
