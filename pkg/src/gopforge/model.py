"""Assembled GOP networks: wiring of the four variants, backprop through the whole stack, persistence.

Block wiring by variant:

* ``pop`` / ``popfast``: each block consumes the previous block's output.
* ``popmem_h``: block k >= 1 carries the memory fitted on block k-1's input;
  block k consumes ``[gop_{k-1}(in_{k-1}), memory(in_{k-1})]``.  The output
  layer sees only the last GOP output.
* ``popmem_o``: block k carries a memory fitted on its own input; the block
  emits ``[gop_k(in_k), memory_k(in_k)]``, which feeds both the next block and
  (for the last block) the output layer.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ContractError, GopError, ShapeError
from .layers import (GopLayerParams, LinearLayerParams, MemoryProjection, concat_features,
                     gop_backward, gop_forward, linear_backward, linear_forward, memory_apply,
                     memory_backward)
from .operators import OperatorSet

VARIANTS = ("pop", "popfast", "popmem_h", "popmem_o")
MODEL_MAGIC = b"GOPMODEL"
MODEL_VERSION = 1


class ModelFileError(GopError):
    """Model file is truncated, corrupted or of an unknown version."""


@dataclass
class Block:
    gop: GopLayerParams
    memory: Optional[MemoryProjection] = None

    def copy(self):
        return Block(self.gop.copy(), self.memory)


@dataclass
class NetworkModel:
    variant: str
    blocks: list
    output: Union[LinearLayerParams, GopLayerParams]
    info: dict = field(default_factory=dict)
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if not self.blocks:
            raise ContractError("a network needs at least one hidden block")
        self.check_wiring()

    @property
    def memory_mode(self):
        return {"popmem_h": "hidden", "popmem_o": "output"}.get(self.variant)

    @property
    def input_dim(self):
        b0 = self.blocks[0]
        if self.memory_mode == "hidden" and b0.memory is not None:
            raise ContractError("popmem_h: the first block cannot carry memory")
        return b0.gop.fan_in

    @property
    def output_dim(self):
        return self.output.fan_out

    def block_output_width(self, k):
        b = self.blocks[k]
        extra = b.memory.out_dim if (self.memory_mode == "output" and b.memory is not None) else 0
        return b.gop.fan_out + extra

    def check_wiring(self):
        mode = self.memory_mode
        for k, b in enumerate(self.blocks):
            if mode is None and b.memory is not None:
                raise ContractError(f"{self.variant}: block {k} must not carry memory")
            if k == 0:
                if mode == "hidden" and b.memory is not None:
                    raise ContractError("popmem_h: block 0 cannot carry memory")
                if mode == "output" and b.memory is not None and b.memory.in_dim != b.gop.fan_in:
                    raise ShapeError("popmem_o: block 0 memory in_dim != fan_in")
                continue
            prev = self.blocks[k - 1]
            if mode == "hidden" and b.memory is not None:
                expected = prev.gop.fan_out + b.memory.out_dim
                if b.memory.in_dim != prev.gop.fan_in:
                    raise ShapeError(f"popmem_h: block {k} memory in_dim != block {k - 1} fan_in")
            else:
                expected = self.block_output_width(k - 1)
            if b.gop.fan_in != expected:
                raise ShapeError(f"block {k}: fan_in {b.gop.fan_in}, wiring provides {expected}")
            if mode == "output" and b.memory is not None and b.memory.in_dim != b.gop.fan_in:
                raise ShapeError(f"popmem_o: block {k} memory in_dim != fan_in")
        last = self.block_output_width(len(self.blocks) - 1)
        if self.output.fan_in != last:
            raise ShapeError(f"output layer fan_in {self.output.fan_in}, last block provides {last}")

    # ------------------------------------------------------------ forward / backward

    def forward(self, X, dropout_rate=0.0, rng=None):
        """Returns ``(output, caches)``; dropout masks GOP block outputs when ``dropout_rate > 0``."""
        mode = self.memory_mode
        cur = X
        prev_in = None
        caches = []
        for b in self.blocks:
            if mode == "hidden" and b.memory is not None:
                inp = concat_features(cur, memory_apply(b.memory, prev_in))
            else:
                inp = cur
            f, gc = gop_forward(b.gop, inp)
            mask = None
            if dropout_rate > 0.0:
                mask = dropout_mask(f.shape, dropout_rate, rng)
                f = f * mask
            if mode == "output" and b.memory is not None:
                cur = concat_features(f, memory_apply(b.memory, inp))
            else:
                cur = f
            caches.append((gc, mask, inp.shape[1]))
            prev_in = inp
        if isinstance(self.output, GopLayerParams):
            out, oc = gop_forward(self.output, cur)
        else:
            out, oc = linear_forward(self.output, cur)
        caches.append(oc)
        return out, caches

    def backward(self, caches, upstream, wrt_logits=False):
        """Gradients for every trainable array, plus the gradient w.r.t. the network input.

        Returns ``(grads, input_grad)`` where ``grads`` is a list of
        ``(weight_grad, bias_grad)`` per block followed by the output layer.
        """
        if len(caches) != len(self.blocks) + 1:
            raise ContractError("backward: cache list does not match the network")
        mode = self.memory_mode
        oc = caches[-1]
        if isinstance(self.output, GopLayerParams):
            g_cur, dw, db = gop_backward(self.output, oc, upstream)
        else:
            g_cur, dw, db = linear_backward(self.output, oc, upstream, wrt_logits=wrt_logits)
        grads = [(dw, db)]
        pending = None  # gradient owed to this block's input by the next block's memory
        for k in range(len(self.blocks) - 1, -1, -1):
            b = self.blocks[k]
            gc, mask, _ = caches[k]
            h = b.gop.fan_out
            if mode == "output" and b.memory is not None:
                g_f = g_cur[:, :h]
                g_mem = memory_backward(b.memory, g_cur[:, h:])
            else:
                g_f, g_mem = g_cur, None
            if mask is not None:
                g_f = g_f * mask
            g_inp, dw, db = gop_backward(b.gop, gc, g_f)
            grads.append((dw, db))
            if g_mem is not None:
                g_inp = g_inp + g_mem
            if pending is not None:
                g_inp = g_inp + pending
                pending = None
            if mode == "hidden" and b.memory is not None:
                d = self.blocks[k - 1].gop.fan_out
                pending = memory_backward(b.memory, g_inp[:, d:])
                g_cur = g_inp[:, :d]
            else:
                g_cur = g_inp
        grads.reverse()
        return grads, g_cur

    def trainable_layers(self):
        return [b.gop for b in self.blocks] + [self.output]

    # ------------------------------------------------------------ inference

    def transform_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.input_mean is None:
            return X
        return (X - self.input_mean) / self.input_scale

    def predict_proba(self, X, raw=True):
        """Network outputs; ``raw=True`` applies the stored input standardisation first."""
        X = self.transform_input(X) if raw else np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"expected input with {self.input_dim} columns, got {X.shape}")
        out, _ = self.forward(X)
        return out

    def predict(self, X, raw=True):
        return np.argmax(self.predict_proba(X, raw=raw), axis=1)

    def parameter_count(self):
        """Trainable parameters only; memory bases are excluded."""
        return sum(p.weights.size + p.bias.size for p in self.trainable_layers())

    def copy(self):
        return NetworkModel(self.variant, [b.copy() for b in self.blocks], self.output.copy(),
                            json.loads(json.dumps(self.info)),
                            None if self.input_mean is None else self.input_mean.copy(),
                            None if self.input_scale is None else self.input_scale.copy())


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: kept units are scaled by 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------- persistence

def _layer_manifest(p):
    if isinstance(p, GopLayerParams):
        return {"type": "gop", "opset": list(p.opset.names), "opset_index": p.opset.index,
                "fan_in": p.fan_in, "fan_out": p.fan_out}
    return {"type": "linear", "activation": p.output_activation,
            "fan_in": p.fan_in, "fan_out": p.fan_out}


def _named_arrays(model):
    arrays = []
    for k, b in enumerate(model.blocks):
        arrays += [(f"block{k}.weights", b.gop.weights), (f"block{k}.bias", b.gop.bias)]
        if b.memory is not None:
            arrays += [(f"block{k}.memory.mean", b.memory.mean), (f"block{k}.memory.basis", b.memory.basis)]
    arrays += [("output.weights", model.output.weights), ("output.bias", model.output.bias)]
    if model.input_mean is not None:
        arrays += [("input.mean", model.input_mean), ("input.scale", model.input_scale)]
    return arrays


def model_manifest(model):
    blocks = []
    for k, b in enumerate(model.blocks):
        entry = _layer_manifest(b.gop)
        entry["memory"] = None if b.memory is None else {
            "kind": b.memory.kind, "in_dim": b.memory.in_dim, "out_dim": b.memory.out_dim,
            "frozen": True, "meta": b.memory.meta}
        entry["output_width"] = model.block_output_width(k)
        blocks.append(entry)
    return {"format_version": MODEL_VERSION, "algorithm": model.variant,
            "input_dim": model.input_dim, "output_dim": model.output_dim,
            "blocks": blocks, "output": _layer_manifest(model.output),
            "trainable_parameters": model.parameter_count(), "info": model.info}


def model_to_bytes(model):
    manifest = model_manifest(model)
    payload = bytearray()
    index = []
    for name, arr in _named_arrays(model):
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": len(payload)})
        payload += a.tobytes()
    manifest["arrays"] = index
    manifest["payload_bytes"] = len(payload)
    manifest["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MODEL_MAGIC + struct.pack("<IQ", MODEL_VERSION, len(head)) + head + bytes(payload)


def save_model(model, path):
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def read_manifest(data):
    if len(data) < 20 or data[:8] != MODEL_MAGIC:
        raise ModelFileError("not a gopforge model file (bad magic)")
    version, head_len = struct.unpack("<IQ", data[8:20])
    if version != MODEL_VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    if len(data) < 20 + head_len:
        raise ModelFileError("model file truncated inside the manifest")
    try:
        manifest = json.loads(data[20:20 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupted manifest: {exc}") from None
    return manifest, 20 + head_len


def model_from_bytes(data):
    manifest, start = read_manifest(data)
    payload = data[start:]
    if len(payload) != manifest["payload_bytes"]:
        raise ModelFileError(
            f"model payload truncated or padded: {len(payload)} bytes, expected {manifest['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ModelFileError("model payload checksum mismatch")
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = a.astype(np.float64).reshape(entry["shape"])

    def layer(m, prefix):
        if m["type"] == "gop":
            return GopLayerParams(arrays[f"{prefix}.weights"], arrays[f"{prefix}.bias"],
                                  OperatorSet.from_names(*m["opset"]))
        return LinearLayerParams(arrays[f"{prefix}.weights"], arrays[f"{prefix}.bias"], m["activation"])

    blocks = []
    for k, m in enumerate(manifest["blocks"]):
        mem = None
        if m["memory"] is not None:
            mm = m["memory"]
            mem = MemoryProjection(mm["kind"], arrays[f"block{k}.memory.mean"],
                                   arrays[f"block{k}.memory.basis"], mm["meta"])
        blocks.append(Block(layer(m, f"block{k}"), mem))
    return NetworkModel(manifest["algorithm"], blocks, layer(manifest["output"], "output"),
                        manifest["info"], arrays.get("input.mean"), arrays.get("input.scale"))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
