"""Dataset loading, synthetic generation and hold-out splits."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import BINARY, UNIT, DataError, LabeledDataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _open(path, mode="rb"):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


# -- CSV ---------------------------------------------------------------------


@dataclass(frozen=True)
class CSVSchema:
    """``classes`` lists label values in class order, bad classes first."""

    classes: tuple
    l: int
    label_column: str = "label"
    domain: str = BINARY


def load_csv_dataset(path, schema: CSVSchema) -> LabeledDataset:
    path = Path(path)
    class_index = {str(c): i for i, c in enumerate(schema.classes)}
    X, y = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if schema.label_column not in header:
            raise DataError(f"{path}: no {schema.label_column!r} column")
        li = header.index(schema.label_column)
        feats = [j for j in range(len(header)) if j != li]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            if row[li] not in class_index:
                raise DataError(f"{path}:{lineno}: unknown label {row[li]!r}")
            try:
                vals = [float(row[j]) for j in feats]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if schema.domain == BINARY and any(v not in (0.0, 1.0) for v in vals):
                raise DataError(f"{path}:{lineno}: non-binary value in a binary column")
            X.append(vals)
            y.append(class_index[row[li]])
    if not X:
        raise DataError(f"{path}: no data rows")
    return LabeledDataset(np.array(X), np.array(y), len(schema.classes), schema.l, schema.domain)


def save_csv_dataset(path, data: LabeledDataset, classes=None, label_column="label", feature_names=None):
    classes = list(classes) if classes is not None else list(range(data.k))
    names = feature_names or [f"f{j}" for j in range(data.d)]
    fmt = (lambda v: str(int(v))) if data.domain == BINARY else repr
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + [label_column])
        for row, lab in zip(data.X, data.y):
            w.writerow([fmt(float(v)) for v in row] + [classes[lab]])


# -- IDX ---------------------------------------------------------------------


def _read_idx(path, magic, ndim):
    with _open(path) as fh:
        blob = fh.read()
    if len(blob) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated header")
    got = struct.unpack(">I", blob[:4])[0]
    if got != magic:
        raise DataError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, blob[4 : 4 + 4 * ndim])
    payload = blob[4 + 4 * ndim :]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(dims)


def load_idx_images(images_path, labels_path, k=10) -> LabeledDataset:
    """IDX image/label pair -> dataset with pixels scaled to [0, 1].

    Labels keep their byte value as the 0-based class index.
    """
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataError(f"image count {len(images)} != label count {len(labels)}")
    X = images.reshape(len(images), -1).astype(float) / 255.0
    return LabeledDataset(X, labels.astype(np.int64), k, 0, UNIT)


def write_idx_images(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with _open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with _open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def save_idx_dataset(images_path, labels_path, data: LabeledDataset, side=None):
    side = side or int(round(np.sqrt(data.d)))
    if side * side != data.d:
        raise DataError("IDX export needs square images")
    pixels = np.rint(data.X * 255.0).clip(0, 255).astype(np.uint8).reshape(-1, side, side)
    write_idx_images(images_path, labels_path, pixels, data.y)


def load_mnist_dir(root, split="train") -> LabeledDataset:
    root = Path(root)
    prefix = "train" if split == "train" else "t10k"
    for suffix in (".gz", ""):
        img = root / f"{prefix}-images-idx3-ubyte{suffix}"
        lab = root / f"{prefix}-labels-idx1-ubyte{suffix}"
        if img.exists() and lab.exists():
            return load_idx_images(img, lab)
    raise DataError(f"no {prefix} IDX files under {root}")


# -- synthetic tabular data --------------------------------------------------


@dataclass(frozen=True)
class SyntheticTabularSpec:
    """Class-conditional product-Bernoulli data: row c of ``means`` holds the
    feature means for class c."""

    means: np.ndarray
    priors: np.ndarray
    l: int
    n: int

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        priors = np.asarray(self.priors, dtype=float)
        if means.ndim != 2 or priors.shape != (means.shape[0],):
            raise ValueError("means must be k x d and priors length k")
        if np.any((means <= 0) | (means >= 1)):
            raise ValueError("Bernoulli means must lie in (0, 1)")
        if np.any(priors < 0) or abs(priors.sum() - 1) > 1e-9:
            raise ValueError("priors must be a probability vector")
        if not 0 <= self.l <= means.shape[0] or self.n < 1:
            raise ValueError("invalid l or n")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "priors", priors)

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]


def generate_synthetic(spec: SyntheticTabularSpec, rng) -> LabeledDataset:
    y = rng.choice(spec.k, size=spec.n, p=spec.priors)
    X = (rng.random((spec.n, spec.d)) < spec.means[y]).astype(float)
    return LabeledDataset(X, y, spec.k, spec.l, BINARY)


def malware_like_spec(d=20, n=4000, seed=7, k=4, l=3, benign_share=0.5, n_shared=3, per_family=3,
                      shared=(0.5, 0.3), marker=(0.75, 0.1), key=(0.97, 0.01), noise=(0.2, 0.5)):
    """A stand-in for a malware-type corpus: ``l`` malware families and
    ``k - l`` benign classes over ``d`` binary indicators.

    The first ``n_shared`` features form a signature common to all malware
    (mean ``shared[0]`` for malware, ``shared[1]`` otherwise). Each class
    then owns ``per_family`` marker features (mean ``marker[0]`` for that
    class, ``marker[1]`` for the rest); with ``key`` given, the first marker
    of every class uses the sharper means ``key`` instead. Any remaining features are noise with
    a class-independent mean drawn from ``noise``. Noise means are drawn once
    from ``seed`` so the layout itself is reproducible.

    When ``d`` is too small for the requested layout the marker block per
    class shrinks (down to one key feature each) before anything is refused.
    """
    per_family = min(per_family, (d - n_shared) // max(k, 1))
    if per_family < 1:
        raise ValueError(f"d={d} leaves no marker feature per class after {n_shared} shared ones")
    informative = n_shared + per_family * k
    if not 0 <= l <= k or k < 1:
        raise ValueError("need 0 <= l <= k and k >= 1")
    rng = np.random.default_rng(seed)
    means = np.empty((k, d))
    means[:, informative:] = rng.uniform(*noise, size=d - informative)[None, :]
    means[:, :n_shared] = np.where(np.arange(k) < l, shared[0], shared[1])[:, None]
    for c in range(k):
        own = n_shared + c * per_family + np.arange(per_family)
        means[:, own] = marker[1]
        means[c, own] = marker[0]
        if key is not None:
            means[:, own[0]] = key[1]
            means[c, own[0]] = key[0]
    priors = np.r_[np.full(l, (1 - benign_share) / max(l, 1)), np.full(k - l, benign_share / max(k - l, 1))]
    if l == 0:
        priors = np.full(k, 1.0 / k)
    elif l == k:
        priors = np.full(k, 1.0 / k)
    return SyntheticTabularSpec(means, priors, l, n)


# -- splits ------------------------------------------------------------------


def repeated_holdout(n, split=0.8, repetitions=10, seed=0):
    """Independent shuffles, each cut into ``(train, test)`` index arrays."""
    n_train = int(round(split * n))
    if not 0 < split < 1 or n_train < 1 or n_train >= n:
        raise DataError(f"cannot split {n} items at {split}")
    out = []
    for r in range(repetitions):
        perm = np.random.default_rng([seed, r]).permutation(n)
        out.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return out
