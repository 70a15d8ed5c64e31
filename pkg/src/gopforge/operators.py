"""The closed GOP operator library: 6 nodal x 4 pooling x 3 activation operators.

Every operator has a forward map and analytic derivatives.  The array
functions (``nodal_eval``, ``pool_eval`` ...) are the vectorised building
blocks of the pure-numpy layer kernel; the scalar functions
(``nodal_forward`` ...) are thin wrappers around them.
"""
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .errors import NumericError, ValidationError

EXP_CLAMP = 50.0


class NodalOp(IntEnum):
    MULTIPLICATION = 0
    EXPONENTIAL = 1
    HARMONIC = 2
    QUADRATIC = 3
    GAUSSIAN = 4
    DOG = 5


class PoolOp(IntEnum):
    SUMMATION = 0
    CORRELATION1 = 1
    CORRELATION2 = 2
    MAXIMUM = 3


class ActOp(IntEnum):
    SIGMOID = 0
    TANH = 1
    RELU = 2


NODAL_NAMES = ("multiplication", "exponential", "harmonic", "quadratic", "gaussian", "dog")
POOL_NAMES = ("summation", "1-correlation", "2-correlation", "maximum")
ACT_NAMES = ("sigmoid", "tanh", "relu")

# minimum input length for each pooling operator
POOL_ARITY = (1, 2, 3, 1)


def op_name(op):
    if isinstance(op, NodalOp):
        return NODAL_NAMES[op]
    if isinstance(op, PoolOp):
        return POOL_NAMES[op]
    if isinstance(op, ActOp):
        return ACT_NAMES[op]
    raise TypeError(f"not an operator: {op!r}")


def parse_op(kind, name):
    table = {"nodal": (NodalOp, NODAL_NAMES), "pool": (PoolOp, POOL_NAMES),
             "act": (ActOp, ACT_NAMES)}[kind]
    try:
        return table[0](table[1].index(name.lower()))
    except ValueError:
        raise ValidationError(f"unknown {kind} operator {name!r}; expected one of {table[1]}") from None


@dataclass(frozen=True)
class OperatorSet:
    nodal: NodalOp
    pool: PoolOp
    act: ActOp

    @property
    def index(self):
        return (int(self.nodal) * len(PoolOp) + int(self.pool)) * len(ActOp) + int(self.act)

    @property
    def names(self):
        return NODAL_NAMES[self.nodal], POOL_NAMES[self.pool], ACT_NAMES[self.act]

    @property
    def arity(self):
        return POOL_ARITY[self.pool]

    def __str__(self):
        return "/".join(self.names)

    @classmethod
    def from_index(cls, index):
        if not 0 <= index < LIBRARY_SIZE:
            raise ValidationError(f"operator set index {index} outside [0, {LIBRARY_SIZE})")
        return enumerate_library()[index]

    @classmethod
    def from_names(cls, nodal, pool, act):
        return cls(parse_op("nodal", nodal), parse_op("pool", pool), parse_op("act", act))


LIBRARY_SIZE = len(NodalOp) * len(PoolOp) * len(ActOp)


@lru_cache(maxsize=None)
def enumerate_library():
    """All 72 operator sets; nodal varies slowest, activation fastest."""
    return tuple(OperatorSet(n, p, a) for n in NodalOp for p in PoolOp for a in ActOp)


# ---------------------------------------------------------------- nodal

def _clamp(a):
    return np.clip(a, -EXP_CLAMP, EXP_CLAMP)


def _inside(a):
    return (a >= -EXP_CLAMP) & (a <= EXP_CLAMP)


def nodal_eval(op, w, y):
    """Nodal output z = nodal(y, w), broadcasting ``w`` against ``y``."""
    if op == NodalOp.MULTIPLICATION:
        return w * y
    if op == NodalOp.EXPONENTIAL:
        return np.exp(_clamp(w * y)) - 1.0
    if op == NodalOp.HARMONIC:
        return np.sin(w * y)
    if op == NodalOp.QUADRATIC:
        return w * (y * y)
    if op == NodalOp.GAUSSIAN:
        return w * np.exp(_clamp(-w * y * y))
    if op == NodalOp.DOG:
        return w * y * np.exp(_clamp(-w * y * y))
    raise ValidationError(f"unknown nodal operator {op!r}")


def nodal_grads(op, w, y):
    """(dz/dw, dz/dy) of the clamped nodal map.

    Where the exponent argument lies outside the clamp window the clamped
    exponential is constant, so its derivative contribution is zero.
    """
    if op == NodalOp.MULTIPLICATION:
        return y + 0.0 * w, w + 0.0 * y
    if op == NodalOp.EXPONENTIAL:
        a = w * y
        e = np.where(_inside(a), np.exp(_clamp(a)), 0.0)
        return y * e, w * e
    if op == NodalOp.HARMONIC:
        c = np.cos(w * y)
        return y * c, w * c
    if op == NodalOp.QUADRATIC:
        return y * y + 0.0 * w, 2.0 * w * y
    if op == NodalOp.GAUSSIAN:
        y2 = y * y
        a = -w * y2
        e = np.exp(_clamp(a))
        k = _inside(a)
        return e * np.where(k, 1.0 - w * y2, 1.0), np.where(k, -2.0 * w * w * y * e, 0.0)
    if op == NodalOp.DOG:
        y2 = y * y
        a = -w * y2
        e = np.exp(_clamp(a))
        k = _inside(a)
        return (y * e * np.where(k, 1.0 - w * y2, 1.0),
                w * e * np.where(k, 1.0 - 2.0 * w * y2, 1.0))
    raise ValidationError(f"unknown nodal operator {op!r}")


# ---------------------------------------------------------------- pooling
# z has the reduced axis at position ``axis`` (default 0).

def check_pool_arity(op, n):
    if n < POOL_ARITY[op]:
        raise ValidationError(
            f"{POOL_NAMES[op]} pooling needs at least {POOL_ARITY[op]} inputs, got {n}")


def pool_eval(op, z, axis=0):
    z = np.moveaxis(z, axis, 0)
    check_pool_arity(op, z.shape[0])
    if op == PoolOp.SUMMATION:
        return z.sum(axis=0)
    if op == PoolOp.CORRELATION1:
        return (z[:-1] * z[1:]).sum(axis=0)
    if op == PoolOp.CORRELATION2:
        return (z[:-2] * z[1:-1] * z[2:]).sum(axis=0)
    if op == PoolOp.MAXIMUM:
        return z.max(axis=0)
    raise ValidationError(f"unknown pooling operator {op!r}")


def pool_grad(op, z, axis=0):
    """d(pool)/dz, same shape as ``z``."""
    zm = np.moveaxis(z, axis, 0)
    n = zm.shape[0]
    check_pool_arity(op, n)
    if op == PoolOp.SUMMATION:
        g = np.ones_like(zm)
    elif op == PoolOp.CORRELATION1:
        g = np.zeros_like(zm)
        g[:-1] += zm[1:]
        g[1:] += zm[:-1]
    elif op == PoolOp.CORRELATION2:
        g = np.zeros_like(zm)
        g[:-2] += zm[1:-1] * zm[2:]
        g[1:-1] += zm[:-2] * zm[2:]
        g[2:] += zm[:-2] * zm[1:-1]
    elif op == PoolOp.MAXIMUM:
        # np.argmax picks the first maximal index
        idx = np.argmax(zm, axis=0)
        g = np.zeros_like(zm)
        np.put_along_axis(g, idx[None, ...], 1.0, axis=0)
    else:
        raise ValidationError(f"unknown pooling operator {op!r}")
    return np.moveaxis(g, 0, axis)


# ---------------------------------------------------------------- activation

def act_eval(op, x):
    if op == ActOp.SIGMOID:
        return 1.0 / (1.0 + np.exp(-_clamp(x)))
    if op == ActOp.TANH:
        return np.tanh(_clamp(x))
    if op == ActOp.RELU:
        return np.maximum(x, 0.0)
    raise ValidationError(f"unknown activation operator {op!r}")


def act_grad(op, x):
    if op == ActOp.SIGMOID:
        s = 1.0 / (1.0 + np.exp(-_clamp(x)))
        return s * (1.0 - s)
    if op == ActOp.TANH:
        t = np.tanh(_clamp(x))
        return 1.0 - t * t
    if op == ActOp.RELU:
        return (x > 0.0).astype(np.float64)
    raise ValidationError(f"unknown activation operator {op!r}")


# ---------------------------------------------------------------- scalar API

def _finite_scalars(*vals):
    for v in vals:
        if not np.isfinite(v):
            raise NumericError(f"operator input is not finite: {v!r}")


def nodal_forward(op, w, y):
    _finite_scalars(w, y)
    return float(nodal_eval(NodalOp(op), np.float64(w), np.float64(y)))


def nodal_backward(op, w, y):
    _finite_scalars(w, y)
    dw, dy = nodal_grads(NodalOp(op), np.float64(w), np.float64(y))
    return float(dw), float(dy)


def pool_forward(op, z):
    z = np.asarray(z, dtype=np.float64)
    _finite_scalars(*z)
    return float(pool_eval(PoolOp(op), z))


def pool_backward(op, z):
    z = np.asarray(z, dtype=np.float64)
    _finite_scalars(*z)
    return pool_grad(PoolOp(op), z)


def act_forward(op, x):
    _finite_scalars(x)
    return float(act_eval(ActOp(op), np.float64(x)))


def act_backward(op, x):
    _finite_scalars(x)
    return float(act_grad(ActOp(op), np.float64(x)))
