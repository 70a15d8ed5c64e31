"""Layer forward/backward passes: GOP layers, the linear output layer, frozen memory projections."""
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ContractError, ShapeError, ValidationError
from .operators import POOL_ARITY, POOL_NAMES, OperatorSet

INIT_RANGE = 0.1


@dataclass
class GopLayerParams:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    opset: OperatorSet

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"GOP layer: weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if self.fan_in < POOL_ARITY[self.opset.pool]:
            raise ValidationError(
                f"GOP layer: {POOL_NAMES[self.opset.pool]} pooling needs fan_in >= "
                f"{POOL_ARITY[self.opset.pool]}, got {self.fan_in}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("GOP layer: non-finite parameters")

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    def copy(self):
        return GopLayerParams(self.weights.copy(), self.bias.copy(), self.opset)


@dataclass
class LinearLayerParams:
    weights: np.ndarray
    bias: np.ndarray
    output_activation: str = "softmax"  # or "identity"

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.output_activation not in ("softmax", "identity"):
            raise ValidationError(f"unknown output activation {self.output_activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"linear layer: weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    def copy(self):
        return LinearLayerParams(self.weights.copy(), self.bias.copy(), self.output_activation)


@dataclass
class MemoryProjection:
    """Frozen linear map ``(x - mean) @ basis``; never touched by gradient descent."""

    kind: str  # "pca" or "lda"
    mean: np.ndarray
    basis: np.ndarray  # (in_dim, out_dim)
    meta: dict = field(default_factory=dict)
    frozen: bool = True

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        if self.basis.ndim != 2 or self.mean.shape != (self.basis.shape[0],):
            raise ShapeError(f"memory: mean {self.mean.shape} and basis {self.basis.shape} disagree")

    @property
    def in_dim(self):
        return self.basis.shape[0]

    @property
    def out_dim(self):
        return self.basis.shape[1]


@dataclass
class GopCache:
    owner: GopLayerParams
    input: np.ndarray
    z: np.ndarray  # (batch, fan_in, fan_out)
    x: np.ndarray  # pre-activation (batch, fan_out)


@dataclass
class LinearCache:
    owner: LinearLayerParams
    input: np.ndarray
    output: np.ndarray


def init_gop_layer(fan_in, fan_out, opset, rng):
    w = rng.uniform(-INIT_RANGE, INIT_RANGE, fan_in * fan_out).reshape(fan_in, fan_out)
    return GopLayerParams(w, np.zeros(fan_out), opset)


def init_linear_layer(fan_in, fan_out, activation, rng):
    w = rng.uniform(-INIT_RANGE, INIT_RANGE, fan_in * fan_out).reshape(fan_in, fan_out)
    return LinearLayerParams(w, np.zeros(fan_out), activation)


def gop_forward(params, inp):
    inp = np.ascontiguousarray(inp, dtype=np.float64)
    if inp.ndim != 2 or inp.shape[1] != params.fan_in:
        raise ShapeError(f"gop_forward: input {inp.shape} does not match fan_in {params.fan_in}")
    s = params.opset
    out, z, x = _backend.gop_forward(inp, params.weights, params.bias, s.nodal, s.pool, s.act)
    return out, GopCache(params, inp, z, x)


def gop_backward(params, cache, upstream):
    """Returns ``(input_grad, weight_grad, bias_grad)``; weight/bias grads are summed over the batch."""
    if cache.owner is not params:
        raise ContractError("gop_backward: cache was produced by a different layer")
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != cache.x.shape:
        raise ContractError(f"gop_backward: upstream {upstream.shape} vs cached batch {cache.x.shape}")
    s = params.opset
    return _backend.gop_backward(cache.input, params.weights, cache.z, cache.x, upstream,
                                 s.nodal, s.pool, s.act)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def linear_forward(params, inp):
    inp = np.asarray(inp, dtype=np.float64)
    if inp.ndim != 2 or inp.shape[1] != params.fan_in:
        raise ShapeError(f"linear_forward: input {inp.shape} does not match fan_in {params.fan_in}")
    logits = inp @ params.weights + params.bias
    out = softmax(logits) if params.output_activation == "softmax" else logits
    return out, LinearCache(params, inp, out)


def linear_backward(params, cache, upstream, wrt_logits=False):
    """Backward through the affine map and (unless ``wrt_logits``) the output activation."""
    if cache.owner is not params:
        raise ContractError("linear_backward: cache was produced by a different layer")
    if upstream.shape != cache.output.shape:
        raise ContractError(f"linear_backward: upstream {upstream.shape} vs cached {cache.output.shape}")
    if params.output_activation == "softmax" and not wrt_logits:
        p = cache.output
        g = p * (upstream - (upstream * p).sum(axis=1, keepdims=True))
    else:
        g = upstream
    return g @ params.weights.T, cache.input.T @ g, g.sum(axis=0)


def memory_apply(proj, inp):
    inp = np.asarray(inp, dtype=np.float64)
    if inp.ndim != 2 or inp.shape[1] != proj.in_dim:
        raise ShapeError(f"memory_apply: input {inp.shape} does not match in_dim {proj.in_dim}")
    return (inp - proj.mean) @ proj.basis


def memory_backward(proj, upstream):
    return upstream @ proj.basis.T


def concat_features(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.size == 0 and b.ndim < 2:
        return a
    if a.size == 0 and a.ndim < 2:
        return b
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_features: row mismatch {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)
