"""Datasets: representation, synthetic generators, CSV I/O and splitting.

A :class:`DataSet` stores its samples column-wise as read-only numpy arrays.
Row ``i`` is sample ``i`` of the ground set, and that index is stable for the
lifetime of the object; every set function in the package refers to samples
by these indices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

__all__ = [
    "LabeledSample",
    "DataSet",
    "generate_synthetic_linear",
    "generate_synthetic_quadratic",
    "quadratic_label",
    "load_csv",
    "write_csv",
    "split",
    "split_indices",
]

LINEAR_COV = np.array([[6.0, 1.0], [1.0, 6.0]])
QUADRATIC_COV = np.array([[12.0, 1.0], [1.0, 14.0]])


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    human_score: float | None = None
    human_error: float | None = None
    grade: int | None = None


def _readonly(a):
    if a is None:
        return None
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DataSet:
    """Labeled samples with their per-sample human information.

    Parameters
    ----------
    features : array of shape (N, m)
    labels : array of shape (N,), entries in {-1, +1}
    human_scores : array of shape (N,), optional
        Normalized expert scores in ``[-H, H]``.
    human_errors : array of shape (N,), optional
        Precomputed nonnegative human error per sample.
    grades : array of shape (N,), optional
        Integer expert grades (1-based), used by the Dirichlet human model.
    H : float
        Bound on ``|human_score|``.
    """

    features: np.ndarray
    labels: np.ndarray
    human_scores: np.ndarray | None = None
    human_errors: np.ndarray | None = None
    grades: np.ndarray | None = None
    H: float = 1.0
    _pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValidationError(f"features must be a non-empty (N, m) array, got shape {X.shape}")
        N = X.shape[0]
        y = np.asarray(self.labels)
        if y.shape != (N,):
            raise ValidationError(f"labels must have shape ({N},), got {y.shape}")
        if not np.all((y == 1) | (y == -1)):
            bad = int(np.flatnonzero((y != 1) & (y != -1))[0])
            raise ValidationError(f"label of sample {bad} is {y[bad]!r}, expected -1 or +1")
        if not self.H > 0:
            raise ValidationError("H must be positive")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y.astype(np.int64)))
        for name in ("human_scores", "human_errors"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape != (N,):
                raise ValidationError(f"{name} must have shape ({N},), got {v.shape}")
            object.__setattr__(self, name, _readonly(v))
        if self.human_scores is not None and np.any(np.abs(self.human_scores) > self.H + 1e-12):
            raise ValidationError(f"human scores must lie in [-{self.H}, {self.H}]")
        if self.human_errors is not None and np.any(self.human_errors < 0):
            raise ValidationError("human errors must be nonnegative")
        if self.grades is not None:
            q = np.asarray(self.grades)
            if q.shape != (N,) or np.any(q != np.round(q)) or np.any(q < 1):
                raise ValidationError("grades must be positive integers, one per sample")
            object.__setattr__(self, "grades", _readonly(q.astype(np.int64)))
        object.__setattr__(self, "_pos", _readonly(self.labels == 1))

    def __len__(self):
        return self.features.shape[0]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self._pos)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(~self._pos)

    @property
    def samples(self) -> list[LabeledSample]:
        return list(iter(self))

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(
            features=self.features[i],
            label=int(self.labels[i]),
            human_score=None if self.human_scores is None else float(self.human_scores[i]),
            human_error=None if self.human_errors is None else float(self.human_errors[i]),
            grade=None if self.grades is None else int(self.grades[i]),
        )

    def subset(self, indices: Sequence[int]) -> "DataSet":
        idx = np.asarray(indices, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return DataSet(
            self.features[idx],
            self.labels[idx],
            human_scores=pick(self.human_scores),
            human_errors=pick(self.human_errors),
            grades=pick(self.grades),
            H=self.H,
        )

    def same_as(self, other: "DataSet") -> bool:
        """Exact equality of every column."""
        if not isinstance(other, DataSet) or self.H != other.H:
            return False
        for name in ("features", "labels", "human_scores", "human_errors", "grades"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not (a.shape == b.shape and np.array_equal(a, b)):
                return False
        return True


def _check_delta_h(delta_h):
    if not 0.0 <= delta_h <= 1.0:
        raise ValidationError(f"delta_h must lie in [0, 1], got {delta_h}")


def _uniform_scores(rng, labels, delta_h):
    # y=+1: U[-dH, 1-dH]; y=-1: U[-1+dH, dH]
    u = rng.random(labels.shape[0])
    lo = np.where(labels == 1, -delta_h, -1.0 + delta_h)
    return lo + u


def generate_synthetic_linear(count: int, delta_h: float, seed: int) -> DataSet:
    """Two-dimensional data that a linear SVM with offset fits poorly.

    Labels are fair coin flips. Negatives come from N([0,0], C); positives from
    an equal mixture of N([5,5], C) and N([-5,-5], C), with C = [[6,1],[1,6]].

    Draw order from ``numpy.random.default_rng(seed)``: labels, mixture
    components, standard normals (count x 2), then human-score uniforms.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    _check_delta_h(delta_h)
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(count) < 0.5, 1, -1)
    beta = rng.random(count) < 0.5
    z = rng.standard_normal((count, 2))
    X = z @ np.linalg.cholesky(LINEAR_COV).T
    centers = np.zeros((count, 2))
    centers[(labels == 1) & beta] = [5.0, 5.0]
    centers[(labels == 1) & ~beta] = [-5.0, -5.0]
    X += centers
    h = _uniform_scores(rng, labels, delta_h)
    return DataSet(X, labels, human_scores=h)


def quadratic_label(x) -> int:
    """+1 inside the ball of radius 2 around [1,1] or outside radius 5 around [-1,-1]."""
    x = np.asarray(x, dtype=float)
    if np.linalg.norm(x - 1.0) <= 2.0 or np.linalg.norm(x + 1.0) >= 5.0:
        return 1
    return -1


def generate_synthetic_quadratic(count: int, delta_h: float, seed: int) -> DataSet:
    """Features from N([0,0], [[12,1],[1,14]]) labeled by :func:`quadratic_label`.

    Draw order: standard normals (count x 2), then human-score uniforms.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    _check_delta_h(delta_h)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((count, 2)) @ np.linalg.cholesky(QUADRATIC_COV).T
    d1 = np.linalg.norm(X - 1.0, axis=1)
    d2 = np.linalg.norm(X + 1.0, axis=1)
    labels = np.where((d1 <= 2.0) | (d2 >= 5.0), 1, -1)
    h = _uniform_scores(rng, labels, delta_h)
    return DataSet(X, labels, human_scores=h)


_HUMAN_COLUMNS = ("h", "c_h", "q")


def load_csv(path, H: float = 1.0) -> DataSet:
    """Read a dataset written as ``f1,...,fm,y,<human columns>``.

    The human columns are any non-empty combination of ``h`` (score),
    ``c_h`` (human error) and ``q`` (integer grade), in that order.
    Row order is preserved.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if "y" not in header:
            raise SchemaError(f"{path}: header has no 'y' column")
        iy = header.index("y")
        feats = header[:iy]
        extra = header[iy + 1:]
        if not feats or feats != [f"f{j + 1}" for j in range(len(feats))]:
            raise SchemaError(f"{path}: feature columns must be f1..fm before 'y', got {feats}")
        if not extra or any(c not in _HUMAN_COLUMNS for c in extra) or len(set(extra)) != len(extra):
            raise SchemaError(f"{path}: expected human columns from {_HUMAN_COLUMNS} after 'y', got {extra}")
        if "h" not in extra and "c_h" not in extra and "q" not in extra:
            raise SchemaError(f"{path}: no human information column")
        width = len(header)
        X, y, cols = [], [], {c: [] for c in extra}
        for row_no, row in enumerate(reader, start=1):
            line = row_no + 1
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise SchemaError(f"{path}: line {line} (row {row_no}) has {len(row)} fields, expected {width}")
            try:
                vals = [float(c) for c in row[:iy]]
                label = float(row[iy])
                extras = {c: float(v) for c, v in zip(extra, row[iy + 1:])}
            except ValueError as exc:
                raise ParseError(f"row {row_no}: {exc}", line=line) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"row {row_no}: non-finite feature", line=line)
            if label not in (1.0, -1.0):
                raise ValidationError(
                    f"{path}: line {line} (row {row_no}): label {row[iy].strip()!r} is not -1 or 1"
                )
            X.append(vals)
            y.append(int(label))
            for c in extra:
                cols[c].append(extras[c])
    if not X:
        raise SchemaError(f"{path}: no data rows")
    try:
        return DataSet(
            np.array(X),
            np.array(y),
            human_scores=np.array(cols["h"]) if "h" in cols else None,
            human_errors=np.array(cols["c_h"]) if "c_h" in cols else None,
            grades=np.array(cols["q"]) if "q" in cols else None,
            H=H,
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_csv(ds: DataSet, path) -> None:
    """Write ``ds`` in the format read by :func:`load_csv` (lossless floats)."""
    header = [f"f{j + 1}" for j in range(ds.dimension)] + ["y"]
    extra = []
    if ds.human_scores is not None:
        extra.append(("h", ds.human_scores))
    if ds.human_errors is not None:
        extra.append(("c_h", ds.human_errors))
    if ds.grades is not None:
        extra.append(("q", ds.grades))
    if not extra:
        raise ValidationError("dataset carries no human information to write")
    header += [name for name, _ in extra]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.features[i]] + [str(int(ds.labels[i]))]
            for name, col in extra:
                row.append(str(int(col[i])) if name == "q" else repr(float(col[i])))
            w.writerow(row)


def split_indices(count: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly shuffled train/test index partition of ``range(count)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must lie in (0, 1)")
    n_train = int(math.floor(train_fraction * count))
    if n_train < 1 or count - n_train < 1:
        raise ValidationError(
            f"train_fraction={train_fraction} on {count} samples leaves an empty side"
        )
    perm = np.random.default_rng(seed).permutation(count)
    return perm[:n_train], perm[n_train:]


def split(ds: DataSet, train_fraction: float, seed: int) -> tuple[DataSet, DataSet]:
    train, test = split_indices(len(ds), train_fraction, seed)
    return ds.subset(train), ds.subset(test)
