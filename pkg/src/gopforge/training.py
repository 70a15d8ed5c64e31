"""Mini-batch SGD for single-hidden-layer networks and whole-network finetuning."""
import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError, TrainingError, ValidationError
from .layers import GopLayerParams, LinearLayerParams
from .model import Block, NetworkModel
from .numkernel import RngStream

REGULARIZERS = ("weight_decay", "max_norm", "none")
LOSSES = ("mse", "cross_entropy")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr_initial: float = 0.01
    lr_drop_every: int = 100
    lr_drop_factor: float = 0.1
    # "multiplicative": lr * factor**k; "subtractive": lr - factor*k, floored at lr_min
    lr_schedule: str = "multiplicative"
    lr_min: float = 1e-6
    batch_size: int = 32
    dropout_rate: float = 0.5
    regularizer: str = "weight_decay"
    reg_value: float = 1e-4
    loss: str = "mse"
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr_initial > 0:
            raise ValidationError(f"lr_initial must be > 0, got {self.lr_initial}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1 or self.lr_drop_every < 1:
            raise ValidationError("batch_size and lr_drop_every must be >= 1")
        if self.regularizer not in REGULARIZERS:
            raise ValidationError(f"regularizer must be one of {REGULARIZERS}")
        if self.loss not in LOSSES:
            raise ValidationError(f"loss must be one of {LOSSES}")
        if self.lr_schedule not in ("multiplicative", "subtractive"):
            raise ValidationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")

    def lr_at(self, epoch):
        k = epoch // self.lr_drop_every
        if self.lr_schedule == "multiplicative":
            return self.lr_initial * self.lr_drop_factor ** k
        return max(self.lr_initial - self.lr_drop_factor * k, self.lr_min)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    final_loss: float
    loss_curve: list
    trained_params: NetworkModel
    epochs_run: int
    curve: list = field(default_factory=list)  # (epoch, lr, train_loss, train_acc, val_acc)
    update_counts: dict = field(default_factory=dict)


# ---------------------------------------------------------------- losses

def loss_forward(loss, predictions, targets):
    if predictions.shape != targets.shape:
        raise ShapeError(f"loss: predictions {predictions.shape} vs targets {targets.shape}")
    if loss == "mse":
        return float(np.mean((predictions - targets) ** 2))
    if loss == "cross_entropy":
        p = np.clip(predictions, 1e-300, None)
        return float(-np.sum(targets * np.log(p)) / predictions.shape[0])
    raise ValidationError(f"unknown loss {loss!r}")


def loss_backward(loss, predictions, targets):
    """MSE: gradient w.r.t. predictions.  Cross-entropy: w.r.t. the softmax logits (fused)."""
    if predictions.shape != targets.shape:
        raise ShapeError(f"loss: predictions {predictions.shape} vs targets {targets.shape}")
    if loss == "mse":
        return 2.0 * (predictions - targets) / predictions.size
    if loss == "cross_entropy":
        return (predictions - targets) / predictions.shape[0]
    raise ValidationError(f"unknown loss {loss!r}")


def accuracy(predictions, labels):
    return float(np.mean(np.argmax(predictions, axis=1) == labels))


# ---------------------------------------------------------------- SGD core

def _check_loss_setup(net, cfg):
    if cfg.loss == "cross_entropy":
        if not (isinstance(net.output, LinearLayerParams) and net.output.output_activation == "softmax"):
            raise ValidationError("cross_entropy loss needs a softmax linear output layer")


def evaluate_loss(net, X, T, loss, batch=4096):
    """Full-data loss without dropout."""
    total = 0.0
    outs = []
    for s in range(0, X.shape[0], batch):
        out, _ = net.forward(X[s:s + batch])
        outs.append(out)
    out = np.concatenate(outs) if len(outs) > 1 else outs[0]
    total = loss_forward(loss, out, T)
    return total, out


def sgd_train(net, X, T, cfg, rng, labels=None, val=None):
    """Train every layer returned by ``net.trainable_layers()`` in place.

    ``val`` is an optional ``(X_val, labels_val)`` pair used only to fill the
    per-epoch val-accuracy column of the curve.  Overflow is not warned
    about; it surfaces as a ``TrainingError`` instead.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _sgd_train(net, X, T, cfg, rng, labels, val)


def _sgd_train(net, X, T, cfg, rng, labels, val):
    _check_loss_setup(net, cfg)
    X = np.ascontiguousarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    n = X.shape[0]
    if T.shape[0] != n:
        raise ShapeError(f"{n} samples but {T.shape[0]} targets")
    if labels is None:
        labels = np.argmax(T, axis=1)
    layers = net.trainable_layers()
    velocity = [(np.zeros_like(p.weights), np.zeros_like(p.bias)) for p in layers] if cfg.momentum else None
    wrt_logits = cfg.loss == "cross_entropy"
    counts = {"steps": 0, "gop_updates": 0, "output_updates": 0, "memory_updates": 0}
    memory_arrays = [id(b.memory.basis) for b in net.blocks if b.memory is not None]
    loss_curve, curve = [], []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        run_loss = 0.0
        run_hits = 0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            xb, tb = X[idx], T[idx]
            out, caches = net.forward(xb, cfg.dropout_rate, rng)
            batch_loss = loss_forward(cfg.loss, out, tb)
            if not math.isfinite(batch_loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            run_loss += batch_loss * len(idx)
            run_hits += int(np.sum(np.argmax(out, axis=1) == labels[idx]))
            grads, _ = net.backward(caches, loss_backward(cfg.loss, out, tb), wrt_logits=wrt_logits)
            counts["steps"] += 1
            if lr == 0.0:
                continue
            for li, (p, (gw, gb)) in enumerate(zip(layers, grads)):
                if cfg.regularizer == "weight_decay":
                    gw = gw + cfg.reg_value * p.weights
                if velocity is not None:
                    vw, vb = velocity[li]
                    vw *= cfg.momentum
                    vw -= lr * gw
                    vb *= cfg.momentum
                    vb -= lr * gb
                    p.weights += vw
                    p.bias += vb
                else:
                    p.weights -= lr * gw
                    p.bias -= lr * gb
                if cfg.regularizer == "max_norm":
                    apply_max_norm(p.weights, cfg.reg_value)
                if id(p.weights) in memory_arrays:
                    counts["memory_updates"] += 1
                elif p is net.output:
                    counts["output_updates"] += 1
                else:
                    counts["gop_updates"] += 1
        if not (np.all([np.all(np.isfinite(p.weights)) for p in layers])):
            raise TrainingError(f"parameters diverged at epoch {epoch}", epoch=epoch)
        loss_curve.append(run_loss / n)
        val_acc = None
        if val is not None:
            val_acc = accuracy(net.forward(val[0])[0], val[1])
        curve.append((epoch, lr, run_loss / n, run_hits / n, val_acc))
    final_loss, _ = evaluate_loss(net, X, T, cfg.loss)
    if not math.isfinite(final_loss):
        raise TrainingError("final loss is not finite", epoch=cfg.epochs - 1)
    return TrainResult(final_loss, loss_curve, net, cfg.epochs, curve, counts)


def apply_max_norm(weights, c):
    """Rescale columns (one per neuron's incoming weights) whose l2 norm exceeds ``c``."""
    norms = np.sqrt((weights * weights).sum(axis=0))
    over = norms > c
    if np.any(over):
        weights[:, over] *= c / norms[over]


# ---------------------------------------------------------------- public entry points

def train_shln(hidden, output, frozen_memory, data, cfg, rng=None):
    """Train one hidden GOP layer plus its output layer on ``data = (X, Y)``.

    With ``frozen_memory`` the hidden representation seen by the output layer
    is ``[GOP(X), memory(X)]``; the memory projection is never updated.
    ``hidden`` and ``output`` are copied, not modified.
    """
    X, Y = data
    if rng is None:
        rng = RngStream(cfg.seed)
    variant = "popmem_o" if frozen_memory is not None else (
        "pop" if isinstance(output, GopLayerParams) else "popfast")
    net = NetworkModel(variant, [Block(hidden.copy(), frozen_memory)], output.copy())
    return sgd_train(net, X, Y, cfg, rng)


def finetune_network(model, data, cfg, rng=None, val=None):
    """Backprop through the whole stack; operator sets and memory projections stay fixed."""
    X, Y = data
    if rng is None:
        rng = RngStream(cfg.seed)
    net = model.copy()
    return sgd_train(net, X, Y, cfg, rng, val=val)


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "train_acc", "val_acc"])
        for epoch, lr, loss, tacc, vacc in curve:
            w.writerow([epoch, repr(lr), repr(loss), repr(tacc), "" if vacc is None else repr(vacc)])
