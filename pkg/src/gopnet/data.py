"""Labeled datasets, delimited-text I/O, anchored forward folds, standardization.

Text layout, one sample per row (comma or whitespace separated)::

    [day] f_1 ... f_D  label_1 [... label_5]

Class ids are 0 = decreasing, 1 = stationary, 2 = increasing (generic
0..C-1 for other data). With five label columns they correspond to the
horizons 10, 20, 30, 50, 100 in that order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HORIZONS = (10, 20, 30, 50, 100)
CLASS_NAMES = ("decreasing", "stationary", "increasing")


class DataFormatError(ValueError):
    """Bad input file; the message names the row (1-based) and column."""


class EmptyInputError(ValueError):
    pass


@dataclass
class LabeledDataset:
    X: np.ndarray
    labels: np.ndarray
    n_classes: int
    day: np.ndarray | None = None
    horizon: int = 10

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.X.ndim != 2 or self.labels.shape != (self.X.shape[0],):
            raise ValueError(f"X {self.X.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if self.day is not None:
            self.day = np.asarray(self.day, dtype=int)
            if self.day.shape != self.labels.shape:
                raise ValueError("day tags must have one entry per sample")
            if np.any(np.diff(self.day) < 0):
                raise ValueError("day tags must be non-decreasing")

    @property
    def Y(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "LabeledDataset":
        day = None if self.day is None else self.day[mask]
        return LabeledDataset(self.X[mask], self.labels[mask], self.n_classes, day, self.horizon)

    def days(self, which) -> "LabeledDataset":
        if self.day is None:
            raise ValueError("dataset has no day tags")
        return self.subset(np.isin(self.day, list(which)))


_SPLIT = re.compile(r"[,\s]+")


def load_dataset(path, *, n_label_cols: int = 1, horizon: int = 10, has_day: bool = False,
                 n_classes: int = 3, label_offset: int = 0) -> LabeledDataset:
    """Parse a delimited text file into a dataset.

    ``n_label_cols`` trailing columns hold labels; with 5 of them ``horizon``
    picks the column. ``label_offset`` is subtracted from raw labels (use 1
    for files coded 1/2/3).
    """
    if n_label_cols == len(HORIZONS):
        if horizon not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}")
        label_col = HORIZONS.index(horizon)
    elif n_label_cols == 1:
        label_col = 0
    else:
        raise ValueError("n_label_cols must be 1 or 5")
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = [c for c in _SPLIT.split(line) if c]
            if width is None:
                width = len(cells)
                if width < n_label_cols + int(has_day) + 1:
                    raise DataFormatError(f"row {lineno}: only {width} columns")
            elif len(cells) != width:
                raise DataFormatError(f"row {lineno}: expected {width} columns, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                col = next(i for i, c in enumerate(cells) if not _is_float(c))
                raise DataFormatError(
                    f"row {lineno} column {col + 1}: non-numeric cell {cells[col]!r}") from None
            rows[-1].append(lineno)
    if not rows:
        raise EmptyInputError(f"{path}: no samples")
    table = np.array(rows)
    linenos = table[:, -1].astype(int)
    table = table[:, :-1]
    start = int(has_day)
    X = table[:, start:width - n_label_cols]
    raw = table[:, width - n_label_cols + label_col] - label_offset
    bad = np.flatnonzero((raw != np.round(raw)) | (raw < 0) | (raw >= n_classes))
    if bad.size:
        i = bad[0]
        raise DataFormatError(
            f"row {linenos[i]} column {width - n_label_cols + label_col + 1}: "
            f"class id {raw[i] + label_offset:g} outside 0..{n_classes - 1} (after offset {label_offset})")
    day = table[:, 0].astype(int) if has_day else None
    return LabeledDataset(X, raw.astype(int), n_classes, day, horizon)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def save_dataset(ds: LabeledDataset, path, delimiter: str = ",") -> None:
    """Write in the layout read by :func:`load_dataset` with one label column.

    Floats are written with ``repr`` so a load after save is exact.
    """
    with open(path, "w") as fh:
        for i in range(ds.n_samples):
            cells = [] if ds.day is None else [str(int(ds.day[i]))]
            cells += [repr(float(v)) for v in ds.X[i]]
            cells.append(str(int(ds.labels[i])))
            fh.write(delimiter.join(cells) + "\n")


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSpec:
    train_days: tuple[int, ...]
    test_day: int


def anchored_folds(ds_or_days, n_folds: int) -> list[FoldSpec]:
    """Expanding-window folds: fold K trains on the first K days, tests on day K+1.

    Accepts a dataset with day tags or an array of day tags.
    """
    day = ds_or_days.day if isinstance(ds_or_days, LabeledDataset) else ds_or_days
    if day is None:
        raise ValueError("anchored folds need day tags")
    days = np.unique(np.asarray(day, dtype=int)).tolist()
    if len(days) < n_folds + 1:
        raise ValueError(f"{n_folds} folds need at least {n_folds + 1} distinct days, got {len(days)}")
    return [FoldSpec(tuple(days[:k]), days[k]) for k in range(1, n_folds + 1)]


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

STD_FLOOR = 1e-8


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def fit_standardizer(X_train) -> Standardizer:
    X_train = np.asarray(X_train, dtype=float)
    if X_train.shape[0] < 1:
        raise EmptyInputError("cannot standardize an empty training set")
    return Standardizer(X_train.mean(axis=0), np.maximum(X_train.std(axis=0), STD_FLOOR))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _simplex_means(n_classes: int, d: int) -> np.ndarray:
    """Unit-simplex vertices in R^d, centered; projected when d < C."""
    v = np.eye(n_classes)
    if d >= n_classes:
        out = np.zeros((n_classes, d))
        out[:, :n_classes] = v
        return out
    centered = v - v.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    return centered @ vt[:d].T


def synth_imbalanced(n_per_class, d: int, separation: float, seed: int = 0,
                     n_days: int = 10) -> LabeledDataset:
    """Gaussian blobs with unit covariance and means at ``separation`` times simplex vertices.

    Samples are shuffled, then day tags 1..n_days are assigned in contiguous
    chunks.
    """
    counts = np.asarray(n_per_class, dtype=int)
    if np.any(counts < 0) or counts.sum() == 0:
        raise ValueError("class counts must be non-negative and not all zero")
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    means = separation * _simplex_means(len(counts), d)
    labels = rng.permutation(np.repeat(np.arange(len(counts)), counts))
    X = means[labels] + rng.standard_normal((labels.size, d))
    day = 1 + (np.arange(labels.size) * n_days) // labels.size
    return LabeledDataset(X, labels, len(counts), day)
