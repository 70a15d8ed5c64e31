"""Datasets: CSV and GOPM ingestion, stratified splits, standardisation, synthetic generators."""
import csv
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import GopError, ValidationError
from .numkernel import RngStream

SPLIT_NAMES = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2
GOPM_MAGIC = b"GOPM"
GOPM_VERSION = 1


class DataFormatError(GopError):
    """Unreadable or malformed data file; the message names the location."""


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    class_names: list
    feature_names: list = field(default_factory=list)
    split: Optional[np.ndarray] = None  # per-sample TRAIN / VAL / TEST
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.ndim != 2 or self.labels.shape != (self.X.shape[0],):
            raise ValidationError(f"dataset: X {self.X.shape} vs labels {self.labels.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("dataset: non-finite feature values")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"dataset: labels outside [0, {self.num_classes})")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def num_features(self):
        return self.X.shape[1]

    def indices(self, which):
        if self.split is None:
            raise ValidationError("dataset has not been split")
        code = SPLIT_NAMES.index(which) if isinstance(which, str) else which
        return np.flatnonzero(self.split == code)

    def part(self, which):
        """``(X, labels)`` of one split."""
        idx = self.indices(which)
        return self.X[idx], self.labels[idx]


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# ---------------------------------------------------------------- CSV

def load_csv(path, label_column, feature_columns=None, class_names=None, name=None):
    """Read a headed CSV; labels are mapped to dense indices in first-appearance order.

    ``feature_columns`` selects and orders the features (default: every
    column except the label).  ``class_names`` pins the label mapping, e.g.
    to the one stored in a trained model.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc.strerror})") from None
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataFormatError(f"{path}: missing label column {label_column!r}")
    if feature_columns is None:
        feature_columns = [h for h in header if h != label_column]
    missing = [c for c in feature_columns if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing feature column(s) {missing}")
    lab_pos = header.index(label_column)
    feat_pos = [header.index(c) for c in feature_columns]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    X = np.empty((len(body), len(feat_pos)))
    mapping = {} if class_names is None else {c: i for i, c in enumerate(class_names)}
    labels = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {line} has {len(row)} cells, header has {len(header)}")
        for j, p in enumerate(feat_pos):
            cell = row[p].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {line}, column {header[p]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataFormatError(f"{path}: row {line}, column {header[p]!r}: non-finite value {cell!r}")
            X[r, j] = v
        lab = row[lab_pos].strip()
        if lab not in mapping:
            if class_names is not None:
                raise DataFormatError(f"{path}: row {line}: unknown class label {lab!r}")
            mapping[lab] = len(mapping)
        labels[r] = mapping[lab]
    names = list(class_names) if class_names is not None else list(mapping)
    return Dataset(X, labels, names, list(feature_columns), name=name or str(path))


def write_csv(path, ds, label_column="label"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [label_column])
        for x, lab in zip(ds.X, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [ds.class_names[lab]])


# ---------------------------------------------------------------- GOPM binary matrices

def write_gopm(path, matrix):
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValidationError("GOPM stores 2-D matrices only")
    with open(path, "wb") as fh:
        fh.write(GOPM_MAGIC + struct.pack("<IQQ", GOPM_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_gopm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:4] != GOPM_MAGIC:
        raise DataFormatError(f"{path}: not a GOPM matrix file")
    version, rows, cols = struct.unpack("<IQQ", data[4:24])
    if version != GOPM_VERSION:
        raise DataFormatError(f"{path}: unsupported GOPM version {version}")
    expected = 24 + 8 * rows * cols
    if len(data) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=24).astype(np.float64).reshape(rows, cols)


# ---------------------------------------------------------------- splitting / scaling

def split_dataset(ds, fractions=(0.6, 0.2, 0.2), seed=0):
    """Seeded stratified split into train/val/test.

    Each class is shuffled on its own stream and its members get evenly
    spaced positions in [0, 1); sorting by position interleaves the classes,
    and a contiguous cut at the global counts yields per-class proportions
    close to ``fractions`` with exact totals.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be 3 non-negative numbers summing to 1, got {fractions}")
    n = len(ds.labels)
    needed = sum(1 for f in fractions if f > 0)
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    short = [ds.class_names[c] for c in range(ds.num_classes) if counts[c] < needed]
    if short:
        raise ValidationError(f"classes {short} have fewer than {needed} samples; cannot fill every split")
    key = np.empty(n)
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        order = RngStream(seed, c).permutation(len(members))
        key[members[order]] = (np.arange(len(members)) + 0.5) / len(members)
    ranked = np.lexsort((ds.labels, key))
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    split = np.empty(n, dtype=np.int8)
    split[ranked[:n_train]] = TRAIN
    split[ranked[n_train:n_train + n_val]] = VAL
    split[ranked[n_train + n_val:]] = TEST
    missing = set(range(ds.num_classes)) - set(ds.labels[split == TRAIN].tolist())
    if missing:
        raise ValidationError(f"train split lacks classes {sorted(missing)}")
    return replace(ds, split=split)


def standardize(ds):
    """Scale features with train-split statistics; constant columns map to 0."""
    X_train, _ = ds.part("train")
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    return replace(ds, X=(ds.X - mean) / scale, mean=mean, scale=scale)


def write_split_manifest(path, ds):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "split"])
        for i, s in enumerate(ds.split):
            w.writerow([i, SPLIT_NAMES[s]])


def read_split_manifest(path, n):
    split = np.full(n, -1, dtype=np.int8)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["sample_index"])
            if not 0 <= i < n:
                raise DataFormatError(f"{path}: sample_index {i} outside [0, {n})")
            split[i] = SPLIT_NAMES.index(row["split"])
    return split


# ---------------------------------------------------------------- synthetic data

def _orthonormal(rng, d, k):
    q, r = np.linalg.qr(rng.generator.normal(size=(d, k)))
    return q * np.sign(np.diag(r))


def make_synthetic(kind, n_samples=1000, num_classes=2, dim=2, noise=None, separation=5.0,
                   pairs=1, levels=2, combine="parity", seed=0):
    """Synthetic classification data.

    * ``blobs``: Gaussian clusters (std ``noise``) whose centres are
      ``separation`` apart (pairwise, when ``dim >= num_classes``).
    * ``moons``: two interleaved half circles embedded in ``dim`` dimensions,
      Gaussian noise of std ``noise`` on every coordinate.
    * ``layered_xor``: uniform inputs in [-1, 1]^dim.  Each of the first
      ``pairs`` coordinate pairs is cut into a checkerboard of
      ``2**levels`` cells per axis, so its bit is an XOR of sign bits taken
      at ``levels`` nested scales.  With ``combine="parity"`` the label is the
      XOR of the pair bits; with ``combine="code"`` it is their binary code
      (``2**pairs`` classes, ``num_classes`` ignored).  Remaining
      coordinates are distractors; a fraction ``noise`` of labels is moved
      to a different class.

    ``noise`` defaults to 1.0, 0.1 and 0.0 respectively.
    """
    if n_samples < 1 or dim < 1:
        raise ValidationError("n_samples and dim must be >= 1")
    if noise is None:
        noise = {"blobs": 1.0, "moons": 0.1}.get(kind, 0.0)
    if noise < 0:
        raise ValidationError("noise must be >= 0")
    rng = RngStream(seed, 0)
    g = rng.generator
    if kind == "blobs":
        if num_classes < 2:
            raise ValidationError("blobs need at least 2 classes")
        if dim >= num_classes:
            centers = _orthonormal(rng, dim, num_classes).T * (separation / math.sqrt(2.0))
        else:
            centers = g.normal(size=(num_classes, dim)) * separation
        labels = np.arange(n_samples) % num_classes
        labels = labels[g.permutation(n_samples)]
        X = centers[labels] + noise * g.normal(size=(n_samples, dim))
    elif kind == "moons":
        if num_classes != 2:
            raise ValidationError("moons have exactly 2 classes")
        if dim < 2:
            raise ValidationError("moons need dim >= 2")
        labels = (np.arange(n_samples) % 2)[g.permutation(n_samples)]
        t = g.uniform(0.0, math.pi, n_samples)
        plane = np.where(labels[:, None] == 0,
                         np.stack([np.cos(t), np.sin(t)], 1),
                         np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], 1))
        X = plane @ _orthonormal(rng, dim, 2).T + noise * g.normal(size=(n_samples, dim))
    elif kind == "layered_xor":
        if combine not in ("parity", "code"):
            raise ValidationError(f"layered_xor combine must be parity or code, got {combine!r}")
        if pairs < 1 or levels < 1:
            raise ValidationError("layered_xor needs pairs >= 1 and levels >= 1")
        if dim < 2 * pairs:
            raise ValidationError(f"layered_xor with {pairs} pair(s) needs dim >= {2 * pairs}")
        if combine == "parity" and num_classes != 2:
            raise ValidationError("layered_xor parity labels have exactly 2 classes")
        if combine == "code":
            num_classes = 2 ** pairs
        if noise >= 1.0 - 1.0 / num_classes:
            raise ValidationError("layered_xor label noise must leave the true class the most likely")
        X = g.uniform(-1.0, 1.0, size=(n_samples, dim))
        cells = np.minimum(np.floor((X[:, :2 * pairs] + 1.0) * 2 ** (levels - 1)), 2 ** levels - 1)
        cells = cells.astype(np.int64)
        bits = (cells[:, 0::2] + cells[:, 1::2]) % 2
        if combine == "parity":
            labels = bits.sum(axis=1) % 2
        else:
            labels = (bits * (1 << np.arange(pairs))).sum(axis=1)
        flip = g.random(n_samples) < noise
        shift = g.integers(1, num_classes, n_samples) if num_classes > 2 else np.ones(n_samples, np.int64)
        labels = np.where(flip, (labels + shift) % num_classes, labels).astype(np.int64)
    else:
        raise ValidationError(f"unknown synthetic kind {kind!r}")
    names = [str(c) for c in range(num_classes)]
    return Dataset(X, labels, names, name=f"{kind}")
