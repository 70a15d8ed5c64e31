"""Progressive layer-wise construction: POP (two-pass GIS), POPfast, POPmem-H and POPmem-O."""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import GopError, ProgressionError, ValidationError
from .layers import concat_features, gop_forward, init_gop_layer, init_linear_layer, memory_apply
from .memory import LdaFitSpec, PcaFitSpec, fit_lda, fit_pca
from .model import Block, NetworkModel
from .numkernel import RngStream, stream_id_for
from .operators import POOL_ARITY, OperatorSet, enumerate_library
from .search import CandidateJob, run_sweep
from .training import TrainConfig, accuracy, finetune_network, train_shln

log = logging.getLogger(__name__)

ALGORITHMS = {"pop": "pop", "popfast": "popfast", "popmemh": "popmem_h", "popmemo": "popmem_o"}

# stream-id phases; candidate sweeps of POPfast and both memory variants share phase 0
PHASE_FAST = 0
PHASE_GIS = (1, 2, 3, 4)  # pass-1 output, pass-1 hidden, pass-2 output, pass-2 hidden
PHASE_DRAW = 5
FINETUNE_STREAM = stream_id_for(0xFFFFFF, 0xFF, 0)


@dataclass(frozen=True)
class NetworkTemplate:
    input_dim: int
    hidden_sizes: tuple
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes:
            raise ValidationError("template needs at least one hidden layer")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValidationError("template input/output sizes must be >= 1")
        small = [h for h in self.hidden_sizes if h < 3]
        if small:
            raise ValidationError(f"hidden layer sizes must be >= 3 (2-correlation pooling), got {small}")

    @classmethod
    def parse(cls, sizes):
        sizes = list(sizes)
        if len(sizes) < 3:
            raise ValidationError(f"template [I, h1, ..., O] needs at least 3 entries, got {sizes}")
        return cls(sizes[0], tuple(sizes[1:-1]), sizes[-1])

    def as_list(self):
        return [self.input_dim, *self.hidden_sizes, self.output_dim]


@dataclass(frozen=True)
class StoppingRule:
    mode: str = "relative_accuracy"  # or "absolute_loss"
    threshold: float = 1e-4
    metric_split: str = "validation"  # or "train"

    def __post_init__(self):
        if self.mode not in ("relative_accuracy", "absolute_loss"):
            raise ValidationError(f"unknown stopping mode {self.mode!r}")
        if self.metric_split not in ("validation", "train"):
            raise ValidationError(f"unknown metric split {self.metric_split!r}")
        if not self.threshold > 0:
            raise ValidationError("stopping threshold must be > 0")


@dataclass(frozen=True)
class ProgressiveConfig:
    train: TrainConfig = TrainConfig()
    finetune: Optional[TrainConfig] = TrainConfig(epochs=200, lr_initial=1e-4, lr_drop_every=100,
                                                  lr_drop_factor=0.1)
    stopping: StoppingRule = StoppingRule()
    run_seed: int = 0
    workers: int = 1
    output_activation: str = "softmax"
    pca_energy: float = 0.98
    memory_ridge: float = 0.01
    memory_ridge_when: str = "always"
    memory_max_dim: Optional[int] = None


@dataclass
class StepRecord:
    step: int
    candidates: int
    opset_index: int
    opset: tuple
    best_loss: float
    accuracy: float  # on the stopping split
    train_accuracy: float
    stopped: bool
    input_width: int
    output_fan_in: int
    memory_dim: int
    seconds: float = 0.0
    output_opset: Optional[tuple] = None

    def manifest(self):
        """Deterministic subset (no wall-clock time) stored in model files."""
        d = asdict(self)
        d.pop("seconds")
        d["opset"] = list(self.opset)
        if self.output_opset is not None:
            d["output_opset"] = list(self.output_opset)
        return d


@dataclass
class ProgressionData:
    X_train: np.ndarray
    y_train: np.ndarray
    num_classes: int
    X_val: Optional[np.ndarray] = None
    y_val: Optional[np.ndarray] = None

    @property
    def targets(self):
        return np.eye(self.num_classes)[self.y_train]


@dataclass
class ProgressionResult:
    model: NetworkModel
    history: list
    sweeps: list = field(default_factory=list)  # (step, phase, SweepResult)
    finetune_curve: list = field(default_factory=list)
    candidate_count: int = 0
    seconds: float = 0.0


# ---------------------------------------------------------------- stopping rule

def should_stop(history, rule):
    """Relative-accuracy rule (acc_now - acc_prev) / acc_prev < threshold, or best loss < threshold.

    ``history`` holds StepRecords or, for convenience, bare accuracies (losses
    in absolute mode).
    """
    if not history:
        raise ValidationError("should_stop: empty history")
    if rule.mode == "absolute_loss":
        return getattr(history[-1], "best_loss", history[-1]) < rule.threshold
    if len(history) < 2:
        return False
    prev = getattr(history[-2], "accuracy", history[-2])
    cur = getattr(history[-1], "accuracy", history[-1])
    if prev == 0:
        return not cur > 0
    return (cur - prev) / prev < rule.threshold


# ---------------------------------------------------------------- candidate task

def shln_candidate(job, ctx):
    """Train one SHLN candidate; module-level so worker processes can run it."""
    rng = RngStream(ctx["run_seed"], job.rng_stream_id)
    X, T = ctx["X"], ctx["T"]
    hidden_set = OperatorSet.from_index(job.payload["hidden"])
    hidden = init_gop_layer(X.shape[1], ctx["hidden_width"], hidden_set, rng)
    mem = ctx["memory"]
    fan = ctx["hidden_width"] + (mem.out_dim if mem is not None else 0)
    if job.payload.get("output") is not None:
        output = init_gop_layer(fan, ctx["output_dim"], OperatorSet.from_index(job.payload["output"]), rng)
    else:
        output = init_linear_layer(fan, ctx["output_dim"], ctx["output_activation"], rng)
    res = train_shln(hidden, output, mem, (X, T), ctx["cfg"], rng)
    return res.final_loss, res


def _sweep(step, phase, X, T, width, cfg, pcfg, out_dim, memory, fixed_hidden=None, fixed_output=None):
    lib = enumerate_library()
    jobs = []
    for i, s in enumerate(lib):
        if fixed_hidden is None:
            payload = {"hidden": s.index, "output": fixed_output}
        else:
            payload = {"hidden": fixed_hidden, "output": s.index}
        jobs.append(CandidateJob(i, s, stream_id_for(step, phase, i), payload))
    ctx = {"X": X, "T": T, "cfg": cfg, "run_seed": pcfg.run_seed, "hidden_width": width,
           "output_dim": out_dim, "output_activation": pcfg.output_activation, "memory": memory}
    res = run_sweep(jobs, pcfg.workers, shln_candidate, ctx)
    if res.all_failed:
        reasons = sorted({f[2].splitlines()[0] if f[2] else f[1] for f in res.failures})[:5]
        raise ProgressionError(f"step {step}: all {len(jobs)} candidates failed; e.g. {reasons}")
    return res


def _pop_gis(step, X, T, width, cfg, pcfg, out_dim):
    """Two-pass greedy iterative search over (hidden, output) operator sets."""
    draw = RngStream(pcfg.run_seed, stream_id_for(step, PHASE_DRAW, 0))
    feasible = [s for s in enumerate_library() if POOL_ARITY[s.pool] <= X.shape[1]]
    hidden_opset = feasible[draw.integers(0, len(feasible))].index
    sweeps = []
    for p in range(2):
        out_sweep = _sweep(step, PHASE_GIS[2 * p], X, T, width, cfg, pcfg, out_dim, None, fixed_hidden=hidden_opset)
        output_opset = out_sweep.outcomes[out_sweep.winner_index].opset.index
        hid_sweep = _sweep(step, PHASE_GIS[2 * p + 1], X, T, width, cfg, pcfg, out_dim, None, fixed_output=output_opset)
        hidden_opset = hid_sweep.outcomes[hid_sweep.winner_index].opset.index
        sweeps += [(step, PHASE_GIS[2 * p], out_sweep), (step, PHASE_GIS[2 * p + 1], hid_sweep)]
    return sweeps


def fit_memory(kind, X, labels, num_classes, pcfg):
    try:
        if kind == "pca":
            return fit_pca(X, PcaFitSpec(pcfg.pca_energy, pcfg.memory_ridge, pcfg.memory_max_dim,
                                         pcfg.memory_ridge_when))
        if kind == "lda":
            return fit_lda(X, labels, LdaFitSpec(num_classes, pcfg.memory_ridge, pcfg.memory_max_dim,
                                                    pcfg.memory_ridge_when))
    except GopError as exc:
        raise ProgressionError(f"memory fit failed: {exc}") from exc
    raise ValidationError(f"unknown memory kind {kind!r}")


# ---------------------------------------------------------------- progression driver

def progress(algorithm, data, template, pcfg=ProgressiveConfig(), memory_kind=None, on_step=None):
    """Run one progressive construction and return a :class:`ProgressionResult`.

    ``algorithm`` is one of ``pop``, ``popfast``, ``popmemh``, ``popmemo``.
    """
    variant = ALGORITHMS.get(algorithm.lower().replace("-", "").replace("_", ""))
    if variant is None:
        raise ValidationError(f"unknown algorithm {algorithm!r}")
    mode = {"popmem_h": "hidden", "popmem_o": "output"}.get(variant)
    if mode is not None and memory_kind not in ("pca", "lda"):
        raise ValidationError(f"{algorithm} needs memory_kind 'pca' or 'lda', got {memory_kind!r}")
    if variant == "pop" and pcfg.train.loss != "mse":
        raise ValidationError("POP trains GOP output layers and supports only the mse loss")
    X_tr = np.ascontiguousarray(data.X_train, dtype=np.float64)
    if X_tr.shape[1] != template.input_dim:
        raise ValidationError(f"template input_dim {template.input_dim} != data dim {X_tr.shape[1]}")
    if template.output_dim != data.num_classes:
        raise ValidationError(f"template output_dim {template.output_dim} != {data.num_classes} classes")
    use_val = data.X_val is not None and pcfg.stopping.metric_split == "validation"
    X_va = np.ascontiguousarray(data.X_val, dtype=np.float64) if use_val else None
    T = data.targets
    O = template.output_dim
    t_start = time.perf_counter()

    cur_tr, cur_va = X_tr, X_va
    prev_tr, prev_va = None, None
    blocks, history, sweeps = [], [], []
    output = None
    total_candidates = 0
    for k, h in enumerate(template.hidden_sizes):
        step = k + 1
        t0 = time.perf_counter()
        block_mem = None
        if mode == "hidden" and k >= 1:
            # previous step's memory, fitted on that step's input once its sweep is done
            block_mem = fit_memory(memory_kind, prev_tr, data.y_train, data.num_classes, pcfg)
            inp_tr = concat_features(cur_tr, memory_apply(block_mem, prev_tr))
            inp_va = concat_features(cur_va, memory_apply(block_mem, prev_va)) if use_val else None
        else:
            inp_tr, inp_va = cur_tr, cur_va
        shln_mem = None
        if mode == "output":
            shln_mem = fit_memory(memory_kind, inp_tr, data.y_train, data.num_classes, pcfg)
            block_mem = shln_mem

        if variant == "pop":
            step_sweeps = _pop_gis(step, inp_tr, T, h, pcfg.train, pcfg, O)
        else:
            step_sweeps = [(step, PHASE_FAST,
                            _sweep(step, PHASE_FAST, inp_tr, T, h, pcfg.train, pcfg, O, shln_mem))]
        sweeps += step_sweeps
        n_cand = sum(len(s.outcomes) for _, _, s in step_sweeps)
        total_candidates += n_cand
        final = step_sweeps[-1][2]
        win = final.winner
        shln = win.result.trained_params
        gop = shln.blocks[0].gop
        output = shln.output
        blocks.append(Block(gop, block_mem))

        train_acc = accuracy(shln.forward(inp_tr)[0], data.y_train)
        acc = accuracy(shln.forward(inp_va)[0], data.y_val) if use_val else train_acc
        f_tr, _ = gop_forward(gop, inp_tr)
        f_va = gop_forward(gop, inp_va)[0] if use_val else None
        if mode == "output":
            cur_tr = concat_features(f_tr, memory_apply(shln_mem, inp_tr))
            cur_va = concat_features(f_va, memory_apply(shln_mem, inp_va)) if use_val else None
        else:
            cur_tr, cur_va = f_tr, f_va
        prev_tr, prev_va = inp_tr, inp_va

        rec = StepRecord(
            step=step, candidates=n_cand, opset_index=win.opset.index, opset=win.opset.names,
            best_loss=float(win.loss), accuracy=acc, train_accuracy=train_acc, stopped=False,
            input_width=inp_tr.shape[1], output_fan_in=output.fan_in,
            memory_dim=0 if block_mem is None else block_mem.out_dim,
            output_opset=output.opset.names if variant == "pop" else None)
        history.append(rec)
        rec.stopped = should_stop(history, pcfg.stopping)
        rec.seconds = time.perf_counter() - t0
        log.info("step %d: %d candidates, best %s loss=%.6g A=%.4f stop=%s (%.1fs)",
                 step, n_cand, "/".join(rec.opset), rec.best_loss, acc, rec.stopped, rec.seconds)
        if on_step is not None:
            on_step(rec)
        if rec.stopped:
            break

    model = assemble_model(variant, blocks, output,
                           {"history": [r.manifest() for r in history], "memory_kind": memory_kind,
                            "template": template.as_list()})
    finetune_curve = []
    if pcfg.finetune is not None:
        val = (np.asarray(data.X_val, dtype=np.float64), data.y_val) if data.X_val is not None else None
        ft = finetune_network(model, (X_tr, T), pcfg.finetune,
                              RngStream(pcfg.run_seed, FINETUNE_STREAM), val=val)
        tuned = ft.trained_params
        tuned.info = model.info
        model = tuned
        finetune_curve = ft.curve
    return ProgressionResult(model, history, sweeps, finetune_curve, total_candidates,
                             time.perf_counter() - t_start)


def assemble_model(variant, blocks, output, info=None):
    """Build the final network from learned blocks; wiring is checked on construction."""
    if not blocks or output is None:
        raise ProgressionError("assemble_model: progression produced no layers")
    return NetworkModel(variant, list(blocks), output, dict(info or {}))


def run_pop(data, template, pcfg=ProgressiveConfig()):
    return progress("pop", data, template, pcfg).model


def run_popfast(data, template, pcfg=ProgressiveConfig()):
    return progress("popfast", data, template, pcfg).model


def run_popmem_h(data, template, pcfg=ProgressiveConfig(), memory_kind="pca"):
    return progress("popmemh", data, template, pcfg, memory_kind).model


def run_popmem_o(data, template, pcfg=ProgressiveConfig(), memory_kind="pca"):
    return progress("popmemo", data, template, pcfg, memory_kind).model


def template_from_model(model):
    """The learned topology as a template (hidden widths include memory outputs)."""
    widths = [model.block_output_width(k) for k in range(len(model.blocks))]
    return NetworkTemplate(model.input_dim, tuple(widths), model.output_dim)
