"""Synthetic generators, CSV ingestion, splitting and the simulated oracle.

Labels are 0-based class indices ``0..K-1``. The sensitive attribute, when
present, takes values in ``{-1, +1}``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AlreadyQueried,
    EmptyFile,
    IndexOutOfPool,
    InfeasibleSplit,
    InvalidProbability,
    InvalidVariance,
    MissingColumn,
    MissingValue,
    UnmappableSensitive,
)

__all__ = [
    "Dataset",
    "SplitSpec",
    "Oracle",
    "Splits",
    "gen_two_gaussians",
    "gen_two_gaussians_unfair",
    "load_csv",
    "make_splits",
    "oracle_query",
]


@dataclass
class Dataset:
    """A feature matrix with optional labels and optional sensitive values.

    ``y`` is ``None`` for unlabeled data (e.g. a masked pool).
    """

    X: np.ndarray
    y: np.ndarray | None
    n_classes: int
    s: np.ndarray | None = None
    feature_names: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature matrix contains NaN or Inf")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        n = self.X.shape[0]
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (n,):
                raise ValueError("labels must be a vector with one entry per row")
            if n and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes - 1}]")
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=np.int64)
            if self.s.shape != (n,):
                raise ValueError("sensitive values must be a vector with one entry per row")
            if not np.all(np.isin(self.s, (-1, 1))):
                raise ValueError("sensitive values must be exactly -1 or +1")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def has_sensitive(self):
        return self.s is not None

    def subset(self, rows, keep_labels=True) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            X=self.X[rows],
            y=self.y[rows] if (keep_labels and self.y is not None) else None,
            n_classes=self.n_classes,
            s=self.s[rows] if self.s is not None else None,
            feature_names=self.feature_names,
        )


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_two_gaussians(n_per_class=1000, mean_0=(-2.0, 0.0), mean_1=(2.0, 0.0),
                      variance=1.0, seed=0) -> Dataset:
    """Two isotropic Gaussian classes with a shared variance.

    Rows are ordered class 0 first, then class 1; splitting shuffles them.
    """
    if variance <= 0:
        raise InvalidVariance(f"variance must be positive, got {variance}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    mean_0 = np.asarray(mean_0, dtype=np.float64)
    mean_1 = np.asarray(mean_1, dtype=np.float64)
    if mean_0.shape != mean_1.shape or mean_0.ndim != 1:
        raise ValueError("class means must be vectors of the same dimension")
    rng = np.random.default_rng(seed)
    sd = np.sqrt(variance)
    d = mean_0.shape[0]
    X = np.vstack([
        mean_0 + sd * rng.standard_normal((n_per_class, d)),
        mean_1 + sd * rng.standard_normal((n_per_class, d)),
    ])
    y = np.repeat([0, 1], n_per_class)
    names = tuple(f"x{j}" for j in range(d))
    return Dataset(X=X, y=y, n_classes=2, feature_names=names)


def gen_two_gaussians_unfair(p=0.9, seed=0, n_per_class=1000, mean_0=(-2.0, 0.0),
                             mean_1=(2.0, 0.0), variance=1.0) -> Dataset:
    """Two-Gaussians with a label-dependent sensitive attribute.

    ``S | Y=0`` is ``+1`` with probability ``p`` and ``S | Y=1`` is ``+1``
    with probability ``1 - p``; ``p = 0.5`` makes S independent of Y.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidProbability(f"p must lie in [0, 1], got {p}")
    base = gen_two_gaussians(n_per_class, mean_0, mean_1, variance, seed)
    # separate stream so the features match gen_two_gaussians with the same seed
    rng = np.random.default_rng([seed, 1])
    prob_plus = np.where(base.y == 0, p, 1.0 - p)
    s = np.where(rng.random(len(base)) < prob_plus, 1, -1)
    return Dataset(X=base.X, y=base.y, n_classes=2, s=s, feature_names=base.feature_names)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _sort_key(value):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def load_csv(path, feature_columns: Sequence[str], label_column: str,
             sensitive_column: str | None = None,
             categorical_columns: Sequence[str] = (),
             standardize: bool = True) -> Dataset:
    """Load a headed, comma-separated UTF-8 file into a :class:`Dataset`.

    Numeric feature columns are standardized (unless ``standardize`` is
    false), categorical ones are one-hot encoded and appended after the
    numeric block in sorted level order. Labels are indexed by the sorted
    order of their distinct values; the sensitive column is mapped to
    ``{-1, +1}`` the same way. Missing numeric values are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        rows = list(reader)
    if not header or not rows:
        raise EmptyFile(f"{path} has no data rows")

    categorical = list(categorical_columns)
    wanted = list(feature_columns) + [label_column]
    if sensitive_column is not None:
        wanted.append(sensitive_column)
    for col in wanted + categorical:
        if col not in header:
            raise MissingColumn(col)

    numeric_cols = [c for c in feature_columns if c not in categorical]
    cat_cols = [c for c in feature_columns if c in categorical]
    cat_cols += [c for c in categorical if c not in cat_cols]

    blocks, names = [], []
    if numeric_cols:
        num = np.empty((len(rows), len(numeric_cols)))
        for j, col in enumerate(numeric_cols):
            for i, row in enumerate(rows):
                raw = row[col].strip()
                if raw == "":
                    raise MissingValue(f"missing numeric value in column {col!r}, row {i + 1}")
                num[i, j] = float(raw)
        if standardize:
            sd = num.std(axis=0)
            num = (num - num.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        blocks.append(num)
        names += numeric_cols
    for col in cat_cols:
        values = [row[col] for row in rows]
        levels = sorted(set(values), key=_sort_key)
        onehot = np.zeros((len(rows), len(levels)))
        lookup = {v: k for k, v in enumerate(levels)}
        onehot[np.arange(len(rows)), [lookup[v] for v in values]] = 1.0
        blocks.append(onehot)
        names += [f"{col}={lvl}" for lvl in levels]
    X = np.hstack(blocks) if blocks else np.empty((len(rows), 0))

    labels = [row[label_column] for row in rows]
    classes = sorted(set(labels), key=_sort_key)
    y = np.array([classes.index(v) for v in labels])

    s = None
    if sensitive_column is not None:
        raw_s = [row[sensitive_column] for row in rows]
        groups = sorted(set(raw_s), key=_sort_key)
        if len(groups) > 2:
            raise UnmappableSensitive(
                f"sensitive column {sensitive_column!r} has {len(groups)} distinct values")
        mapping = {g: (-1, 1)[k] for k, g in enumerate(groups)}
        if len(groups) == 1:
            mapping = {groups[0]: 1}
        s = np.array([mapping[v] for v in raw_s])

    return Dataset(X=X, y=y, n_classes=max(len(classes), 2), s=s, feature_names=tuple(names))


# ---------------------------------------------------------------------------
# Splits and oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    initial_train_size: int = 10
    test_size: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.initial_train_size < 2:
            raise InfeasibleSplit("initial_train_size must be at least 2")
        if self.test_size < 0:
            raise InfeasibleSplit("test_size must be nonnegative")


class Oracle:
    """Hands out the hidden pool labels, each at most once."""

    def __init__(self, labels):
        self._labels = np.asarray(labels, dtype=np.int64)
        self._queried = np.zeros(len(self._labels), dtype=bool)

    def __len__(self):
        return len(self._labels)

    def query(self, pool_index) -> int:
        i = int(pool_index)
        if not 0 <= i < len(self._labels):
            raise IndexOutOfPool(i)
        if self._queried[i]:
            raise AlreadyQueried(i)
        self._queried[i] = True
        return int(self._labels[i])

    def is_queried(self, pool_index) -> bool:
        return bool(self._queried[int(pool_index)])

    @property
    def n_queried(self):
        return int(self._queried.sum())


def oracle_query(oracle: Oracle, pool_index) -> int:
    return oracle.query(pool_index)


@dataclass
class Splits:
    """Result of :func:`make_splits`.

    ``*_rows`` index the source dataset; pool position ``i`` corresponds to
    source row ``pool_rows[i]`` and to oracle index ``i``.
    """

    train: Dataset
    pool: Dataset
    oracle: Oracle
    test: Dataset
    train_rows: np.ndarray
    pool_rows: np.ndarray
    test_rows: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.train, self.pool, self.oracle, self.test))


def make_splits(dataset: Dataset, spec: SplitSpec, rng=None) -> Splits:
    """Disjoint uniform train / pool / test partition.

    The test set is drawn first (passive labeling of the hold-out), then the
    initial train set from what remains; everything else is the pool, whose
    labels are hidden behind the returned :class:`Oracle`.
    """
    n = len(dataset)
    if dataset.y is None:
        raise InfeasibleSplit("dataset must be fully labeled to simulate an oracle")
    if spec.initial_train_size + spec.test_size > n:
        raise InfeasibleSplit(
            f"train {spec.initial_train_size} + test {spec.test_size} exceeds {n} instances")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    test_rows = np.sort(perm[:spec.test_size])
    rest = perm[spec.test_size:]
    train_rows = np.sort(rest[:spec.initial_train_size])
    pool_rows = np.sort(rest[spec.initial_train_size:])
    return Splits(
        train=dataset.subset(train_rows),
        pool=dataset.subset(pool_rows, keep_labels=False),
        oracle=Oracle(dataset.y[pool_rows]),
        test=dataset.subset(test_rows),
        train_rows=train_rows,
        pool_rows=pool_rows,
        test_rows=test_rows,
    )
