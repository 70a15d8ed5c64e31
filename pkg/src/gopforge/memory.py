"""Fitting of the frozen linear memory projections (PCA and LDA)."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .layers import MemoryProjection
from .numkernel import as_matrix, sym_eig


RIDGE_WHEN = ("always", "singular")
SINGULAR_RTOL = 1e-10  # smallest/largest eigenvalue ratio below which a scatter counts as singular


def _check_ridge(ridge, when):
    if ridge < 0:
        raise ValidationError(f"ridge must be >= 0, got {ridge}")
    if when not in RIDGE_WHEN:
        raise ValidationError(f"ridge_when must be one of {RIDGE_WHEN}, got {when!r}")


@dataclass(frozen=True)
class PcaFitSpec:
    energy_threshold: float = 0.98
    ridge: float = 0.01
    max_dim: Optional[int] = None  # hard cap on out_dim; None means no cap
    ridge_when: str = "always"  # or "singular": only when the covariance is singular

    def __post_init__(self):
        if not 0.0 < self.energy_threshold <= 1.0:
            raise ValidationError(f"energy_threshold must be in (0, 1], got {self.energy_threshold}")
        _check_ridge(self.ridge, self.ridge_when)


@dataclass(frozen=True)
class LdaFitSpec:
    num_classes: int
    ridge: float = 0.01
    max_dim: Optional[int] = None
    ridge_when: str = "always"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"LDA needs at least 2 classes, got {self.num_classes}")
        _check_ridge(self.ridge, self.ridge_when)


def _ridged_eig(s, ridge, when):
    """Eigenpairs of ``s + ridge*I``; with ``when="singular"`` the ridge is added only if needed."""
    d = s.shape[0]
    if when == "singular":
        vals, vecs = sym_eig(0.5 * (s + s.T))
        if vals[-1] > SINGULAR_RTOL * max(vals[0], np.finfo(float).tiny):
            return vals, vecs, 0.0
    s = s + ridge * np.eye(d)
    vals, vecs = sym_eig(0.5 * (s + s.T))
    return vals, vecs, ridge


def _cap(k, max_dim):
    return k if max_dim is None else min(k, max_dim)


def energy_dim(eigenvalues, threshold):
    """Smallest k whose leading eigenvalues hold at least ``threshold`` of the total."""
    vals = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    cum = np.cumsum(vals)
    if cum[-1] <= 0.0:
        return 1
    frac = cum / cum[-1]
    return int(min(np.searchsorted(frac, threshold, side="left") + 1, len(vals)))


def fit_pca(X, spec=PcaFitSpec()):
    X = as_matrix(X, "fit_pca input")
    n, d = X.shape
    if n < 2:
        raise ValidationError(f"fit_pca: need at least 2 samples, got {n}")
    mean = X.mean(axis=0)
    xc = X - mean
    vals, vecs, used = _ridged_eig(xc.T @ xc / (n - 1), spec.ridge, spec.ridge_when)
    k = _cap(energy_dim(vals, spec.energy_threshold), spec.max_dim)
    meta = {"energy_threshold": spec.energy_threshold, "ridge": used,
            "eigenvalues": vals[:k].tolist(),
            "retained_energy": float(np.clip(vals, 0, None)[:k].sum() / np.clip(vals, 0, None).sum())}
    return MemoryProjection("pca", mean, vecs[:, :k], meta)


def scatter_matrices(X, labels, num_classes):
    """Within- and between-class scatter, both normalised by the sample count."""
    n, d = X.shape
    mean = X.mean(axis=0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in range(num_classes):
        xc = X[labels == c]
        mu = xc.mean(axis=0)
        dev = xc - mu
        sw += dev.T @ dev
        diff = (mu - mean)[:, None]
        sb += len(xc) * (diff @ diff.T)
    return mean, sw / n, sb / n


def fit_lda(X, labels, spec):
    X = as_matrix(X, "fit_lda input")
    labels = np.asarray(labels, dtype=np.int64)
    n, d = X.shape
    C = spec.num_classes
    if labels.shape != (n,):
        raise ValidationError(f"fit_lda: {n} rows but {labels.shape[0]} labels")
    counts = np.bincount(labels, minlength=C)
    if labels.min() < 0 or len(counts) > C:
        raise ValidationError(f"fit_lda: labels outside [0, {C})")
    empty = [c for c in range(C) if counts[c] == 0]
    if empty:
        raise ValidationError(f"fit_lda: classes without samples: {empty}")
    if C - 1 > d:
        raise ValidationError(f"fit_lda: C-1 = {C - 1} exceeds feature dimension {d}")
    mean, sw, sb = scatter_matrices(X, labels, C)
    # whiten S_w, then diagonalise the whitened S_b
    w_vals, w_vecs, used = _ridged_eig(sw, spec.ridge, spec.ridge_when)
    if w_vals[-1] <= 0.0:
        raise ValidationError("fit_lda: within-class scatter is singular; use ridge > 0")
    whiten = w_vecs / np.sqrt(w_vals)
    sb_w = whiten.T @ sb @ whiten
    b_vals, b_vecs = sym_eig(0.5 * (sb_w + sb_w.T))
    k = _cap(C - 1, spec.max_dim)
    basis = whiten @ b_vecs[:, :k]
    meta = {"num_classes": C, "ridge": used, "eigenvalues": b_vals[:k].tolist()}
    return MemoryProjection("lda", mean, basis, meta)
