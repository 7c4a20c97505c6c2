"""Data ingestion, class bookkeeping and per-class summaries.

Everything downstream consumes :class:`LabeledDataset`: an immutable n x p
matrix of observations with optional class labels remapped to ``1..K``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LabeledDataset",
    "ClassStats",
    "DataError",
    "load_csv",
    "class_stats",
    "split_folds",
    "center_by_class",
    "feature_sigma_hat",
]


class DataError(ValueError):
    """Raised for malformed input files or contract violations on datasets."""


@dataclass(frozen=True)
class LabeledDataset:
    """Observations with optional class labels.

    Attributes
    ----------
    X : ndarray of shape (n, p)
        Observation rows. Finite; read-only after construction.
    y : ndarray of shape (n,) or None
        Class labels in ``1..K`` (None for clustering-only data).
    K : int
        Number of classes; 0 when unlabeled.
    feature_names : tuple of str, optional
        Column names when the source file had a header.
    label_names : tuple of str, optional
        Original label tokens, in first-appearance order; ``label_names[k-1]``
        is the token that was mapped to class ``k``.
    """

    X: np.ndarray
    y: np.ndarray | None = None
    K: int = 0
    feature_names: tuple[str, ...] | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"X must be a non-empty 2-d matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains NaN or Inf entries")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=int)
            if y.shape != (X.shape[0],):
                raise DataError("y must have one label per row")
            K = int(self.K) if self.K else int(y.max())
            counts = np.bincount(y, minlength=K + 1)
            if counts[0] > 0 or y.max() > K or np.any(counts[1:] == 0):
                raise DataError(f"labels must cover 1..{K} with every class nonempty")
            y.setflags(write=False)
            object.__setattr__(self, "y", y)
            object.__setattr__(self, "K", K)
        else:
            object.__setattr__(self, "K", 0)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def class_sizes(self) -> np.ndarray:
        """Counts n_k for k = 1..K."""
        if not self.labeled:
            raise DataError("dataset has no labels")
        return np.bincount(self.y, minlength=self.K + 1)[1:]

    def rows_of_class(self, k: int) -> np.ndarray:
        """Indices of the rows with label k."""
        if not self.labeled:
            raise DataError("dataset has no labels")
        return np.flatnonzero(self.y == k)

    def subset(self, rows: np.ndarray) -> "LabeledDataset":
        """New dataset restricted to the given rows (labels kept if present)."""
        y = self.y[rows] if self.labeled else None
        ds = LabeledDataset(self.X[rows], y, self.K if self.labeled else 0,
                            self.feature_names, self.label_names)
        return ds

    @classmethod
    def from_arrays(cls, X, y=None) -> "LabeledDataset":
        """Build a dataset from arrays, remapping arbitrary label values.

        Labels are mapped to ``1..K`` in first-appearance order; the original
        values are recorded in ``label_names``.
        """
        if y is None:
            return cls(np.asarray(X, dtype=float))
        y = np.asarray(y)
        order: dict = {}
        mapped = np.empty(len(y), dtype=int)
        for i, v in enumerate(y):
            key = v.item() if hasattr(v, "item") else v
            if key not in order:
                order[key] = len(order) + 1
            mapped[i] = order[key]
        return cls(np.asarray(X, dtype=float), mapped, len(order),
                   label_names=tuple(str(v) for v in order))


@dataclass(frozen=True)
class ClassStats:
    """Per-class summary statistics of a labeled dataset.

    ``priors[k-1] = n_k / n`` exactly, ``means[k-1]`` is the mean of the
    class-k rows, and ``sigma_hat`` is the largest per-dimension sample
    standard deviation over the whole dataset.
    """

    priors: np.ndarray
    means: np.ndarray
    overall_mean: np.ndarray
    sigma_hat: float
    class_sizes: np.ndarray = field(repr=False, default=None)


def feature_sigma_hat(X: np.ndarray) -> float:
    """Largest sample standard deviation (ddof=1) over the feature columns."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        return 0.0
    return float(np.max(np.std(X, axis=0, ddof=1)))


def load_csv(path, label_column=None, header: bool = False) -> LabeledDataset:
    """Read a comma-separated file into a dataset.

    Parameters
    ----------
    path : str or Path
        File to read.
    label_column : int, str or None
        Column holding the class label, by 0-based index or (with
        ``header=True``) by name. None loads an unlabeled dataset.
    header : bool
        Whether the first row holds column names.

    Labels are remapped to ``1..K`` in first-appearance order and the mapping
    is kept on the returned dataset for reporting.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path}: file is empty")

    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: no data rows after header")

    arity = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != arity:
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {arity}")

    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str):
            if names is None:
                raise DataError("label column given by name but file has no header")
            try:
                label_idx = names.index(label_column)
            except ValueError:
                raise DataError(f"no column named {label_column!r}") from None
        else:
            label_idx = int(label_column)
            if label_idx < 0:
                label_idx += arity
            if not 0 <= label_idx < arity:
                raise DataError(f"label column {label_column} out of range for {arity} columns")

    feature_idx = [j for j in range(arity) if j != label_idx]
    if not feature_idx:
        raise DataError("no feature columns left after removing the label column")

    X = np.empty((len(rows), len(feature_idx)))
    for i, row in enumerate(rows):
        for jj, j in enumerate(feature_idx):
            cell = row[j].strip()
            try:
                X[i, jj] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {i + 1}") from None
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: NaN or Inf feature values are not accepted")

    labels = [row[label_idx].strip() for row in rows] if label_idx is not None else None
    fnames = tuple(names[j] for j in feature_idx) if names else None
    ds = LabeledDataset.from_arrays(X, labels)
    if fnames:
        object.__setattr__(ds, "feature_names", fnames)
    return ds


def class_stats(ds: LabeledDataset) -> ClassStats:
    """Empirical class priors, class means, overall mean, and sigma_hat."""
    if not ds.labeled:
        raise DataError("class_stats requires a labeled dataset")
    sizes = ds.class_sizes()
    priors = sizes / ds.n
    means = np.vstack([ds.X[ds.rows_of_class(k)].mean(axis=0) for k in range(1, ds.K + 1)])
    return ClassStats(
        priors=priors,
        means=means,
        overall_mean=ds.X.mean(axis=0),
        sigma_hat=feature_sigma_hat(ds.X),
        class_sizes=sizes,
    )


def split_folds(ds: LabeledDataset, folds: int, seed: int) -> np.ndarray:
    """Stratified fold assignment, one fold id in ``0..folds-1`` per row.

    Each class is spread across folds as evenly as possible; unlabeled data
    are treated as a single stratum. Deterministic for a given seed.
    """
    if folds < 2:
        raise DataError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    assign = np.empty(ds.n, dtype=int)
    strata = ([ds.rows_of_class(k) for k in range(1, ds.K + 1)]
              if ds.labeled else [np.arange(ds.n)])
    for rows in strata:
        if len(rows) < folds:
            raise DataError(
                f"smallest class has {len(rows)} rows; cannot make {folds} folds")
        perm = rng.permutation(len(rows))
        assign[rows[perm]] = np.arange(len(rows)) % folds
    return assign


def center_by_class(ds: LabeledDataset) -> LabeledDataset:
    """Subtract each class mean from its rows.

    The per-class means of the result are zero vectors; labels are kept.
    """
    if not ds.labeled:
        raise DataError("center_by_class requires a labeled dataset")
    X = ds.X.copy()
    for k in range(1, ds.K + 1):
        rows = ds.rows_of_class(k)
        X[rows] -= X[rows].mean(axis=0)
    return LabeledDataset(X, ds.y, ds.K, ds.feature_names, ds.label_names)
