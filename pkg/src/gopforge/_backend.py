"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
numpy kernels in ``_kernels_py`` are used.  ``GOPFORGE_BACKEND=python``
forces the fallback.
"""
import os

from . import _kernels_py

_python = _kernels_py
_compiled = None
if os.environ.get("GOPFORGE_BACKEND", "").lower() != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None

_BACKENDS = {"python": _python}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = _compiled if _compiled is not None else _python


def name():
    return "cython" if _active is _compiled and _compiled is not None else "python"


def available():
    return sorted(_BACKENDS)


def get(backend=None):
    """Kernel module for ``backend`` (None means the active one)."""
    if backend is None:
        return _active
    try:
        return _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"backend {backend!r} not available; have {available()}") from None


def use(backend):
    """Switch the active backend process-wide (mainly for tests/benchmarks)."""
    global _active
    _active = get(backend)


def gop_forward(y, w, b, nodal, pool, act):
    return _active.gop_forward(y, w, b, int(nodal), int(pool), int(act))


def gop_backward(y, w, z, x, dout, nodal, pool, act):
    return _active.gop_backward(y, w, z, x, dout, int(nodal), int(pool), int(act))


def jacobi_eig(a, v, max_sweeps):
    return _active.jacobi_eig(a, v, max_sweeps)
