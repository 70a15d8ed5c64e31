"""Dense linear algebra and seedable randomness.

A "Matrix" here is simply a C-contiguous 2-D ``numpy.float64`` array; the
helpers below validate shape and finiteness at the boundaries where the
rest of the package accepts user data.
"""
import numpy as np

from . import _backend
from .errors import NumericError, ShapeError, ValidationError

SYMMETRY_TOL = 1e-9
JACOBI_MAX_SWEEPS = 100


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite float64 2-D array (copying only if needed)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got {m.ndim}-D")
    check_finite(m, name)
    return m


def check_finite(a, name="array"):
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(np.asarray(a)))[0]
        raise NumericError(f"{name}: non-finite entry at index {tuple(int(i) for i in bad)}")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul: operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} dimension mismatch")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul: non-finite result")
    return out


def sym_eig(s):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and eigenvectors as the columns of an orthonormal matrix.  Each
    eigenvector is sign-normalised so that its largest-magnitude entry is
    positive.
    """
    s = as_matrix(s, "sym_eig input")
    n, m = s.shape
    if n != m:
        raise ShapeError(f"sym_eig: matrix must be square, got {s.shape}")
    asym = np.abs(s - s.T)
    if asym.size and asym.max() > SYMMETRY_TOL:
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise ValidationError(
            f"sym_eig: matrix not symmetric at ({i}, {j}): |diff| = {asym[i, j]:.3e}")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    a = 0.5 * (s + s.T)
    v = np.eye(n)
    sweeps = _backend.jacobi_eig(a, v, JACOBI_MAX_SWEEPS)
    if sweeps < 0:
        raise NumericError(f"sym_eig: Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    v = v[:, order]
    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivots, np.arange(n)])
    signs[signs == 0] = 1.0
    v = np.ascontiguousarray(v * signs)
    return vals, v


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox-4x64 generator with the two 64-bit words as its key,
    so distinct stream ids give independent sequences and the draws do not
    depend on platform or on which other streams were used.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def split(self, stream_id):
        return RngStream(self.seed, stream_id)

    def uniform(self, lo, hi, n):
        if not lo < hi:
            raise ValidationError(f"rng_uniform: need lo < hi, got lo={lo}, hi={hi}")
        u = self.generator.random(n)
        out = lo + (hi - lo) * u
        # lo + (hi-lo)*u can round up to hi
        return np.minimum(out, np.nextafter(hi, lo))

    def random(self, shape):
        return self.generator.random(shape)

    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, lo, hi):
        return int(self.generator.integers(lo, hi))


def rng_uniform(stream, lo, hi, n):
    return stream.uniform(lo, hi, n)


def stream_id_for(step, phase, candidate):
    """Pack (step, sweep phase, candidate) into one 64-bit stream id."""
    return ((int(step) & 0xFFFFFF) << 40) | ((int(phase) & 0xFF) << 32) | (int(candidate) & 0xFFFFFFFF)
