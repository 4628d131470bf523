"""Tabular classification data: CSV loading, [0, 1] normalization, splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    class_id: int


@dataclass(frozen=True)
class SplitSpec:
    proportions: Tuple[float, float, float] = (0.5, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        if len(self.proportions) != 3 or any(p < 0 for p in self.proportions):
            raise DatasetError("split proportions must be three non-negative reals")
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise DatasetError("split proportions must sum to 1")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (n x d), integer labels ``y`` and metadata.

    ``normalization`` holds the raw (min, max) of every feature once
    :func:`normalize` has been applied, and is ``None`` before.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    class_names: Tuple[str, ...]
    normalization: Optional[Tuple[Tuple[float, float], ...]] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            X = X.reshape(len(X), -1)
        y = np.asarray(self.y, dtype=int).reshape(-1)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if X.shape[0] != y.shape[0]:
            raise DatasetError("feature rows and labels differ in length")
        if X.shape[1] != len(self.feature_names):
            raise DatasetError("feature_names does not match the feature count")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise DatasetError("class id out of range")
        if self.normalization is not None:
            norm = tuple((float(lo), float(hi)) for lo, hi in self.normalization)
            if len(norm) != X.shape[1]:
                raise DatasetError("normalization must have one entry per feature")
            object.__setattr__(self, "normalization", norm)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def samples(self) -> List[Sample]:
        return [Sample(self.X[i], int(self.y[i])) for i in range(self.n)]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Apply the stored normalization to raw rows, clamped to [0, 1]."""
        if self.normalization is None:
            raise DatasetError("dataset is not normalized")
        return apply_normalization(X, self.normalization)

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "class_names": list(self.class_names),
            "normalization": None if self.normalization is None
            else [list(p) for p in self.normalization],
            "samples": [{"features": self.X[i].tolist(), "class_id": int(self.y[i])}
                        for i in range(self.n)],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        feats = doc["feature_names"]
        samples = doc["samples"]
        X = np.array([s["features"] for s in samples], dtype=float).reshape(len(samples), len(feats))
        y = np.array([s["class_id"] for s in samples], dtype=int)
        norm = doc.get("normalization")
        return cls(X, y, feats, doc["class_names"],
                   None if norm is None else tuple(tuple(p) for p in norm))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_json(json.loads(Path(path).read_text()))


def _parse_float(text: str) -> Optional[float]:
    try:
        return float(text)
    except ValueError:
        return None


def load_csv(path, class_column: str, categorical: Iterable[str] = (),
             class_names: Optional[Sequence[str]] = None) -> Dataset:
    """Read a headed, comma-separated file.

    Numeric columns are kept in file order; every column listed in
    ``categorical`` is one-hot encoded (levels in first-appearance order)
    and appended after the numeric features. Classes are numbered in
    first-appearance order unless ``class_names`` fixes the order.
    """
    path = Path(path)
    categorical = list(categorical)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    if not body:
        raise DatasetError(f"{path}: no data rows")
    if class_column not in header:
        raise DatasetError(f"{path}: missing class column {class_column!r}")
    for col in categorical:
        if col not in header:
            raise DatasetError(f"{path}: missing categorical column {col!r}")
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{r}: expected {len(header)} fields, got {len(row)}")

    ci = header.index(class_column)
    labels = [row[ci] for row in body]
    if class_names is None:
        class_names = list(dict.fromkeys(labels))
    mapping = {c: k for k, c in enumerate(class_names)}
    unknown = set(labels) - set(mapping)
    if unknown:
        raise DatasetError(f"{path}: labels {sorted(unknown)} not in class_names")
    y = np.array([mapping[c] for c in labels], dtype=int)

    columns: List[np.ndarray] = []
    names: List[str] = []
    for j, col in enumerate(header):
        if j == ci or col in categorical:
            continue
        values = [_parse_float(row[j]) for row in body]
        if any(v is None for v in values):
            raise DatasetError(f"{path}: non-numeric column {col!r} not declared categorical")
        columns.append(np.array(values, dtype=float))
        names.append(col)
    for col in categorical:
        j = header.index(col)
        levels = list(dict.fromkeys(row[j] for row in body))
        for level in levels:
            columns.append(np.array([1.0 if row[j] == level else 0.0 for row in body]))
            names.append(f"{col}={level}")
    if not columns:
        raise DatasetError(f"{path}: no features")
    X = np.column_stack(columns)
    return Dataset(X, y, names, class_names, name=path.stem)


def apply_normalization(X: np.ndarray, normalization) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    lo = np.array([p[0] for p in normalization])
    hi = np.array([p[1] for p in normalization])
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def normalize(ds: Dataset) -> Dataset:
    """Min-max scale every feature to [0, 1]; constant features become 0.

    Applying it to an already normalized dataset leaves the values alone and
    composes the recorded ranges, so they still refer to the raw data.
    """
    if ds.n == 0:
        return ds
    lo = ds.X.min(axis=0)
    hi = ds.X.max(axis=0)
    current = tuple(zip(lo.tolist(), hi.tolist()))
    X = apply_normalization(ds.X, current)
    if ds.normalization is None:
        record = current
    else:
        record = tuple(
            (plo + clo * (phi - plo), plo + chi * (phi - plo))
            for (plo, phi), (clo, chi) in zip(ds.normalization, current))
    return replace(ds, X=X, normalization=record)


def split_sizes(n: int, proportions: Sequence[float]) -> Tuple[int, int, int]:
    # the epsilon guards products such as 0.29 * 100 = 28.999...
    n_train = int(math.floor(proportions[0] * n + 1e-9))
    n_val = int(math.floor(proportions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> Tuple[Dataset, Dataset, Dataset]:
    if ds.n < 3:
        raise DatasetError("need at least 3 samples to split")
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    n_train, n_val, _ = split_sizes(ds.n, spec.proportions)
    return (ds.subset(perm[:n_train]),
            ds.subset(perm[n_train:n_train + n_val]),
            ds.subset(perm[n_train + n_val:]))


def subsample(ds: Dataset, max_samples: int, seed: int) -> Dataset:
    """Uniform subsample without replacement when ``ds`` exceeds ``max_samples``."""
    if ds.n <= max_samples:
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(ds.n, size=max_samples, replace=False))
    return ds.subset(idx)


def load_builtin(name: str) -> Dataset:
    """Datasets that ship with scikit-learn (no network access needed)."""
    from sklearn import datasets as skd

    loaders = {"iris": skd.load_iris, "wine": skd.load_wine,
               "breast-cancer-diagnostic": skd.load_breast_cancer}
    if name not in loaders:
        raise DatasetError(f"unknown builtin dataset {name!r}; choose from {sorted(loaders)}")
    bunch = loaders[name]()
    return Dataset(bunch.data, bunch.target, [str(f) for f in bunch.feature_names],
                   [str(c) for c in bunch.target_names], name=name)


def load_any(spec: str, class_column: str = "class", categorical: Iterable[str] = ()) -> Dataset:
    """``builtin:<name>``, a dataset JSON document, or a CSV file."""
    if spec.startswith("builtin:"):
        return load_builtin(spec.split(":", 1)[1])
    if spec.endswith(".json"):
        return Dataset.load(spec)
    return load_csv(spec, class_column, categorical)
