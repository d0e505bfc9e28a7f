"""Experiment configuration: nested dataclasses, JSON in and out, content digest."""

from __future__ import annotations

import hashlib
import math
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .encoder_analysis import SyntheticEmbedSpec
from .flowcore import GaussianTask, ScheduleConfig
from .tasks import CompositionalTask, UnconditionalGaussian
from .velocity_net import NetDims, TimeEmbedConfig

TASK_KINDS = ("gaussian", "compositional")


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "compositional"
    # gaussian
    mean: tuple[float, ...] = (1.0, -0.5)
    std: float = 0.5
    # compositional
    n_attributes: int = 2
    values_per_attribute: int = 2
    spacing: float = 2.0
    component_std: float = 0.3
    data_dim: int = 2
    holdout: tuple[int, ...] = ()  # compositional ids excluded from training batches
    n_samples: int = 10_000

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "holdout", tuple(int(h) for h in self.holdout))

    def build(self):
        if self.kind == "gaussian":
            if len(self.mean) != self.data_dim:
                raise ValueError(f"gaussian mean has {len(self.mean)} entries but data_dim is {self.data_dim}")
            return UnconditionalGaussian(GaussianTask(self.mean, self.std))
        return CompositionalTask(self.n_attributes, self.values_per_attribute, self.spacing,
                                 self.component_std, self.data_dim, self.holdout)


@dataclass(frozen=True)
class EmbedConfig:
    mode: str = "disentangled"
    separation: float = 4.0
    tokens_per_attribute: int = 3
    seed: int = 7


@dataclass(frozen=True)
class TrainConfig:
    fm_steps: int = 10_000
    mf_steps: int = 20_000
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = "cosine"
    lr_final_frac: float = 0.0
    v_source: str = "pretrained"
    eval_every: int = 500
    eval_samples: int = 2_000
    checkpoint_every: int = 2_500

    def lr_at(self, step: int, total: int) -> float:
        """Learning rate for optimizer step ``step`` of ``total`` (0-based)."""
        if self.lr_schedule == "constant" or total <= 1:
            return self.lr
        frac = min(step / (total - 1), 1.0)
        lo = self.lr * self.lr_final_frac
        return lo + 0.5 * (self.lr - lo) * (1.0 + math.cos(math.pi * frac))

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.v_source not in ("pretrained", "conditional"):
            raise ValueError(f"v_source must be 'pretrained' or 'conditional', got {self.v_source!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    task: TaskConfig = field(default_factory=TaskConfig)
    embedding: EmbedConfig = field(default_factory=EmbedConfig)
    net: NetDims = field(default_factory=NetDims)
    time_embed: TimeEmbedConfig = field(default_factory=TimeEmbedConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return _build(cls, doc)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def build_task(self):
        return self.task.build()

    def embed_spec(self) -> SyntheticEmbedSpec | None:
        if self.task.kind == "gaussian":
            return None
        return SyntheticEmbedSpec(self.task.n_attributes, self.task.values_per_attribute, self.net.cond_dim,
                                  self.embedding.separation, self.embedding.mode,
                                  self.embedding.tokens_per_attribute)


def _build(cls, doc: Any):
    if not is_dataclass(cls):
        return doc
    if not isinstance(doc, dict):
        raise ValueError(f"expected an object for {cls.__name__}, got {type(doc).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ValueError(f"unknown {cls.__name__} field(s): {unknown}")
    kwargs = {}
    for name, value in doc.items():
        ftype = known[name].type
        sub = _NESTED.get(ftype) if isinstance(ftype, str) else None
        kwargs[name] = _build(sub, value) if sub is not None else (tuple(value) if isinstance(value, list) else value)
    return cls(**kwargs)


_NESTED = {
    "TaskConfig": TaskConfig,
    "EmbedConfig": EmbedConfig,
    "NetDims": NetDims,
    "TimeEmbedConfig": TimeEmbedConfig,
    "ScheduleConfig": ScheduleConfig,
    "TrainConfig": TrainConfig,
}


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(path: str | Path, cfg: ExperimentConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    return path
