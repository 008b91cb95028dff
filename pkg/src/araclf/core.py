"""Shared types and numeric kernels.

Feature vectors are plain numpy arrays. Binary ("tabular") data holds real
0/1 values so the same arrays flow through both the discrete and the
continuous tracks. Class labels are 0-based integers; classes ``0..l-1`` are
the attacker's "bad" classes and ``l..k-1`` the "good" ones.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

BINARY = "binary"
UNIT = "unit"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _as_binary(a, name="x"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise DataError(f"{name} must be a nonempty 1-d vector")
    if not np.all((a == 0) | (a == 1)):
        raise DataError(f"{name} is not binary")
    return a


def is_binary(X) -> bool:
    X = np.asarray(X)
    return bool(np.all((X == 0) | (X == 1)))


@dataclass(frozen=True)
class LabeledDataset:
    """Instances ``X`` (n x d), 0-based labels ``y``, class count ``k`` and
    bad-class count ``l``."""

    X: np.ndarray
    y: np.ndarray
    k: int
    l: int = 0
    domain: str = BINARY

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DataError("dataset must be a nonempty n x d array")
        if y.shape != (X.shape[0],):
            raise DataError("label count does not match instance count")
        if not 0 <= self.l <= self.k:
            raise DataError(f"need 0 <= l <= k, got l={self.l}, k={self.k}")
        if y.min() < 0 or y.max() >= self.k:
            raise DataError("label out of range")
        if self.domain == BINARY and not is_binary(X):
            raise DataError("binary dataset contains values other than 0/1")
        if self.domain == UNIT and (X.min() < 0 or X.max() > 1):
            raise DataError("unit-interval dataset has values outside [0, 1]")
        if self.domain not in (BINARY, UNIT):
            raise DataError(f"unknown domain {self.domain!r}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.k, self.l, self.domain)


def zero_one_utility(k: int) -> np.ndarray:
    """Defender utility u(decision, truth): 1 on the diagonal, 0 elsewhere."""
    return np.eye(k)


def check_utility(U, k=None) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError("utility matrix must be square")
    if k is not None and U.shape[0] != k:
        raise ValueError(f"utility matrix must be {k}x{k}")
    if not np.all(np.isfinite(U)):
        raise ValueError("utility matrix has non-finite entries")
    return U


def hamming_distance(a, b) -> int:
    a = _as_binary(a, "a")
    b = _as_binary(b, "b")
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.size} vs {b.size}")
    return int(np.count_nonzero(a != b))


def flip_masks(d: int, radius: int, mask=None) -> np.ndarray:
    """Boolean (m x d) array of flip patterns, one row per neighbor.

    Rows are ordered by the number of flips, then lexicographically by the
    flipped index set, so row 0 is always the empty flip (the center).
    """
    features = np.arange(d) if mask is None else np.unique(np.asarray(mask, dtype=int))
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius > len(features):
        raise ValueError(f"radius {radius} exceeds the {len(features)} mutable features")
    rows = []
    for r in range(radius + 1):
        for combo in itertools.combinations(features, r):
            row = np.zeros(d, dtype=bool)
            row[list(combo)] = True
            rows.append(row)
    return np.array(rows, dtype=bool).reshape(-1, d)


def neighborhood_size(m: int, radius: int) -> int:
    return sum(comb(m, j) for j in range(radius + 1))


@dataclass(frozen=True)
class Neighborhood:
    """Binary vectors within Hamming ``radius`` of ``center``, flipping only
    features listed in ``mask`` (all features when ``mask`` is None)."""

    center: np.ndarray
    radius: int = 1
    mask: tuple | None = None

    def enumerate(self) -> np.ndarray:
        return enumerate_neighborhood(self)


def enumerate_neighborhood(n: Neighborhood) -> np.ndarray:
    center = _as_binary(n.center, "center")
    flips = flip_masks(center.size, n.radius, n.mask)
    return np.where(flips, 1.0 - center, center)


def neighbors_batch(X, flips) -> np.ndarray:
    """Neighborhoods of every row of ``X``: shape (n, m, d)."""
    X = np.asarray(X, dtype=float)
    return np.where(flips[None, :, :], 1.0 - X[:, None, :], X[:, None, :])


def log_sum_exp(v, axis=-1):
    v = np.asarray(v, dtype=float)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if np.isnan(v).any():
        raise ValueError("NaN in log_sum_exp input")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=float)
    return v - np.expand_dims(log_sum_exp(v, axis=axis), axis)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=float)
    if np.isnan(v).any():
        raise ValueError("NaN in softmax input")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)
