"""Experiment configuration: one JSON document, validated up front.

Key paths (all optional unless noted)::

    algorithm            pop | popfast | popmemh | popmemo        (required)
    memory_kind          pca | lda; required iff algorithm is popmemh/popmemo
    template             [I, h1, ..., hN, O]                      (required)
    data.source          synthetic | csv | gopm                   (required)
    data.*               per source, see DATA_KEYS
    split.fractions      [train, val, test], default [0.6, 0.2, 0.2]
    split.seed           default 0
    standardize          default true
    train.*              TrainConfig fields (candidate search)
    finetune.*           TrainConfig fields, or null to skip finetuning
    stopping.*           mode, threshold, metric_split
    memory.*             pca_energy, ridge, ridge_when (always | singular), max_dim
    output_activation    softmax | identity
    run_seed, workers
    output.dir           default "run"
    output.model         default "model.gopm-model"
"""
import copy
import json
import os
from dataclasses import dataclass, fields
from typing import Optional

from .errors import ValidationError
from .progressive import ALGORITHMS, NetworkTemplate, ProgressiveConfig, StoppingRule
from .training import TrainConfig

SCHEMA_VERSION = 1

DATA_KEYS = {
    "synthetic": {"source", "kind", "n_samples", "num_classes", "dim", "noise", "separation", "pairs", "levels", "combine", "seed"},
    "csv": {"source", "path", "label_column", "feature_columns"},
    "gopm": {"source", "features", "labels"},
}
TOP_KEYS = {"schema_version", "algorithm", "memory_kind", "template", "data", "split", "standardize",
            "train", "finetune", "stopping", "memory", "output_activation", "run_seed", "workers", "output"}

DEFAULT_FINETUNE = ProgressiveConfig().finetune


class ConfigError(ValidationError):
    """Invalid experiment configuration; ``field`` is the offending key path."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


def _unknown(section, given, allowed):
    extra = sorted(set(given) - set(allowed))
    if extra:
        where = f"{section}.{extra[0]}" if section else extra[0]
        raise ConfigError(where, "unknown key")


def _train_config(d, section, base):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ConfigError(section, "expected an object")
    names = {f.name for f in fields(TrainConfig)}
    _unknown(section, d, names)
    merged = base.to_dict() if base is not None else {}
    merged.update(d)
    try:
        return TrainConfig(**merged)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(section, str(exc)) from None


@dataclass
class ExperimentConfig:
    algorithm: str
    template: NetworkTemplate
    data: dict
    memory_kind: Optional[str] = None
    split_fractions: tuple = (0.6, 0.2, 0.2)
    split_seed: int = 0
    standardize: bool = True
    train: TrainConfig = TrainConfig()
    finetune: Optional[TrainConfig] = DEFAULT_FINETUNE
    stopping: StoppingRule = StoppingRule()
    pca_energy: float = 0.98
    memory_ridge: float = 0.01
    memory_ridge_when: str = "always"
    memory_max_dim: Optional[int] = None
    output_activation: str = "softmax"
    run_seed: int = 0
    workers: int = 1
    out_dir: str = "run"
    model_name: str = "model.gopm-model"

    def progressive_config(self):
        return ProgressiveConfig(train=self.train, finetune=self.finetune, stopping=self.stopping,
                                 run_seed=self.run_seed, workers=self.workers,
                                 output_activation=self.output_activation, pca_energy=self.pca_energy,
                                 memory_ridge=self.memory_ridge, memory_max_dim=self.memory_max_dim,
                                 memory_ridge_when=self.memory_ridge_when)

    @property
    def model_path(self):
        return os.path.join(self.out_dir, self.model_name)

    def echo(self):
        """Everything that determines the trained model; worker count and output paths excluded."""
        return {
            "schema_version": SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "memory_kind": self.memory_kind,
            "template": self.template.as_list(),
            "data": copy.deepcopy(self.data),
            "split": {"fractions": list(self.split_fractions), "seed": self.split_seed},
            "standardize": self.standardize,
            "train": self.train.to_dict(),
            "finetune": None if self.finetune is None else self.finetune.to_dict(),
            "stopping": {"mode": self.stopping.mode, "threshold": self.stopping.threshold,
                         "metric_split": self.stopping.metric_split},
            "memory": {"pca_energy": self.pca_energy, "ridge": self.memory_ridge,
                       "ridge_when": self.memory_ridge_when,
                       "max_dim": self.memory_max_dim},
            "output_activation": self.output_activation,
            "run_seed": self.run_seed,
        }

    def to_dict(self):
        d = self.echo()
        d["workers"] = self.workers
        d["output"] = {"dir": self.out_dir, "model": self.model_name}
        return d


def _int(value, field, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {value}")
    return value


def _resolve(path, base_dir, field):
    if not isinstance(path, str) or not path:
        raise ConfigError(field, "expected a non-empty path string")
    return os.path.normpath(os.path.join(base_dir, path)) if base_dir else path


def parse_config(raw, base_dir=None):
    """Validate a config mapping; relative data paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _unknown("", raw, TOP_KEYS)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}")

    if "algorithm" not in raw:
        raise ConfigError("algorithm", "required")
    algo = str(raw["algorithm"]).lower().replace("-", "").replace("_", "")
    if algo not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {sorted(ALGORITHMS)}, got {raw['algorithm']!r}")
    mem = raw.get("memory_kind")
    if mem is not None:
        mem = str(mem).lower()
    if algo in ("popmemh", "popmemo"):
        if mem not in ("pca", "lda"):
            raise ConfigError("memory_kind", f"required for {algo}: 'pca' or 'lda'")
    elif mem is not None:
        raise ConfigError("memory_kind", f"not allowed for {algo}")

    if "template" not in raw:
        raise ConfigError("template", "required")
    if not isinstance(raw["template"], list):
        raise ConfigError("template", "expected a list [I, h1, ..., O]")
    try:
        template = NetworkTemplate.parse([_int(v, "template", 1) for v in raw["template"]])
    except ValidationError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("template", str(exc)) from None

    data = raw.get("data")
    if not isinstance(data, dict) or "source" not in data:
        raise ConfigError("data.source", "required")
    source = data["source"]
    if source not in DATA_KEYS:
        raise ConfigError("data.source", f"must be one of {sorted(DATA_KEYS)}")
    _unknown("data", data, DATA_KEYS[source])
    data = dict(data)
    if source == "synthetic":
        if data.get("kind") not in ("blobs", "moons", "layered_xor"):
            raise ConfigError("data.kind", "must be blobs, moons or layered_xor")
    elif source == "csv":
        data["path"] = _resolve(data.get("path"), base_dir, "data.path")
        if not isinstance(data.get("label_column"), str):
            raise ConfigError("data.label_column", "required")
        fc = data.get("feature_columns")
        if fc is not None and not (isinstance(fc, list) and all(isinstance(c, str) for c in fc)):
            raise ConfigError("data.feature_columns", "expected a list of column names")
    else:
        data["features"] = _resolve(data.get("features"), base_dir, "data.features")
        data["labels"] = _resolve(data.get("labels"), base_dir, "data.labels")

    split = raw.get("split", {})
    _unknown("split", split, {"fractions", "seed"})
    fractions = split.get("fractions", [0.6, 0.2, 0.2])
    if (not isinstance(fractions, list) or len(fractions) != 3
            or not all(isinstance(f, (int, float)) and f >= 0 for f in fractions)
            or abs(sum(fractions) - 1.0) > 1e-9):
        raise ConfigError("split.fractions", "expected 3 non-negative numbers summing to 1")

    train = _train_config(raw.get("train", {}), "train", TrainConfig())
    finetune = _train_config(raw.get("finetune", {}), "finetune", DEFAULT_FINETUNE) if (
        raw.get("finetune", {}) is not None) else None
    if algo == "pop" and train.loss != "mse":
        raise ConfigError("train.loss", "pop supports only mse")

    st = raw.get("stopping", {})
    _unknown("stopping", st, {"mode", "threshold", "metric_split"})
    try:
        stopping = StoppingRule(**st)
    except ValidationError as exc:
        raise ConfigError("stopping", str(exc)) from None

    mem_cfg = raw.get("memory", {})
    _unknown("memory", mem_cfg, {"pca_energy", "ridge", "ridge_when", "max_dim"})
    energy = mem_cfg.get("pca_energy", 0.98)
    if not isinstance(energy, (int, float)) or not 0 < energy <= 1:
        raise ConfigError("memory.pca_energy", "must be in (0, 1]")
    ridge = mem_cfg.get("ridge", 0.01)
    if not isinstance(ridge, (int, float)) or ridge < 0:
        raise ConfigError("memory.ridge", "must be >= 0")
    ridge_when = mem_cfg.get("ridge_when", "always")
    if ridge_when not in ("always", "singular"):
        raise ConfigError("memory.ridge_when", "must be always or singular")
    max_dim = mem_cfg.get("max_dim")
    if max_dim is not None:
        _int(max_dim, "memory.max_dim", 0)

    act = raw.get("output_activation", "softmax")
    if act not in ("softmax", "identity"):
        raise ConfigError("output_activation", "must be softmax or identity")
    if train.loss == "cross_entropy" and act != "softmax":
        raise ConfigError("train.loss", "cross_entropy needs output_activation softmax")

    out = raw.get("output", {})
    _unknown("output", out, {"dir", "model"})
    out_dir = out.get("dir", "run")
    model_name = out.get("model", "model.gopm-model")
    if not model_name.endswith(".gopm-model"):
        raise ConfigError("output.model", "model file name must end in .gopm-model")

    cfg = ExperimentConfig(
        algorithm=algo, template=template, data=data, memory_kind=mem,
        split_fractions=tuple(float(f) for f in fractions),
        split_seed=_int(split.get("seed", 0), "split.seed", 0),
        standardize=bool(raw.get("standardize", True)),
        train=train, finetune=finetune, stopping=stopping,
        pca_energy=float(energy), memory_ridge=float(ridge), memory_max_dim=max_dim,
        memory_ridge_when=ridge_when,
        output_activation=act,
        run_seed=_int(raw.get("run_seed", 0), "run_seed", 0),
        workers=_int(raw.get("workers", 1), "workers", 1),
        out_dir=out_dir, model_name=model_name)
    check_paths(cfg)
    return cfg


def check_paths(cfg):
    inputs = [cfg.data[k] for k in ("path", "features", "labels") if k in cfg.data]
    if len(set(map(os.path.abspath, inputs))) != len(inputs):
        raise ConfigError("data", "input paths must be distinct")
    model = os.path.abspath(cfg.model_path)
    if model in map(os.path.abspath, inputs):
        raise ConfigError("output.model", "model path collides with an input path")


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def with_overrides(cfg, workers=None, seed=None, out_dir=None):
    """Apply command-line overrides (the workers environment variable wins over both, see the CLI)."""
    if workers is not None:
        cfg.workers = _int(workers, "workers", 1)
    if seed is not None:
        cfg.run_seed = _int(seed, "run_seed", 0)
    if out_dir is not None:
        cfg.out_dir = out_dir
    check_paths(cfg)
    return cfg
