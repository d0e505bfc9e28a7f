"""Flow-matching pretraining and MeanFlow finetuning loops.

Every step draws its batch from ``make_rng(seed, "train", mode, step)``, so a
run resumed from a checkpoint (which stores the Adam state) continues exactly
as the uninterrupted run would.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import numcore as nc
from .config import ExperimentConfig
from .encoder_analysis import gen_synthetic_embeddings
from .flowcore import ScheduleConfig, fm_loss, meanflow_loss, sample_times
from .numcore import AdamState, NumericError
from .velocity_net import VelocityNet, duplicate_time_embedding

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, mode: str, step: int, cause: Exception):
        self.mode, self.step = mode, step
        super().__init__(f"{mode} training hit a non-finite value at step {step}: {cause}")


def condition_table(cfg: ExperimentConfig) -> np.ndarray:
    """(n_conditions, cond_dim) psi rows; the gaussian task uses a single all-zero row."""
    spec = cfg.embed_spec()
    if spec is None:
        return np.zeros((1, cfg.net.cond_dim))
    return gen_synthetic_embeddings(spec, cfg.embedding.seed).vectors


def init_net(cfg: ExperimentConfig, mode: str = "fm") -> VelocityNet:
    return VelocityNet.init(cfg.net, cfg.time_embed, nc.make_rng(cfg.seed, "init", mode), mode)


def fm_schedule(cfg: ScheduleConfig) -> ScheduleConfig:
    """Flow matching only needs t: the same family at the starting (mu, sigma), all pairs equal."""
    return replace(cfg, mu_end=cfg.mu_start, sigma_end=cfg.sigma_start, neq_ratio_start=0.0, neq_ratio_end=0.0)


@dataclass
class TrainResult:
    net: VelocityNet
    opt: AdamState
    losses: list[float] = field(default_factory=list)


def train(net: VelocityNet, cfg: ExperimentConfig, mode: str, steps: int, *, task=None, table=None,
          v_source="conditional", start_step: int = 0, opt: AdamState | None = None,
          total_steps: int | None = None,
          on_step: Callable[[int, VelocityNet, AdamState, float], None] | None = None) -> TrainResult:
    """Run ``steps`` optimizer steps starting at ``start_step``.

    ``mode`` is "fm" (regress the conditional velocity at r = t) or "mf"
    (MeanFlow objective, bootstrapping from ``v_source``: "conditional" or a
    frozen fm ``VelocityNet``). ``total_steps`` sets the progress denominator
    for the (t, r) schedule; it defaults to ``start_step + steps``.
    ``on_step(step_done, net, opt, loss)`` fires after every update.
    """
    if mode not in ("fm", "mf"):
        raise ValueError(f"mode must be 'fm' or 'mf', got {mode!r}")
    task = cfg.build_task() if task is None else task
    table = condition_table(cfg) if table is None else table
    tc = cfg.train
    total = start_step + steps if total_steps is None else total_steps
    sched = fm_schedule(cfg.schedule) if mode == "fm" else cfg.schedule
    params = net.params
    opt = AdamState() if opt is None else opt
    losses = []
    for step in range(start_step, start_step + steps):
        rng = nc.make_rng(cfg.seed, "train", mode, step)
        x, cond = task.sample_batch(rng, tc.batch_size)
        eps = rng.standard_normal(x.shape)
        psi = table[cond]
        progress = min(step / max(total - 1, 1), 1.0)
        t, r = sample_times(rng, progress, sched, tc.batch_size)
        current = net.with_params(params)
        try:
            tape = nc.Tape()
            watched = tape.watch(params)
            if mode == "fm":
                loss = fm_loss(current, x, eps, psi, t, params=watched)
            else:
                loss = meanflow_loss(current, x, eps, psi, t, r, v_source, params=watched)
            grads = tape.backward(loss)
            params, opt = nc.adam_step(params, grads, opt, tc.lr_at(step, total), tc.beta1, tc.beta2, tc.adam_eps)
        except NumericError as exc:
            raise TrainingDiverged(mode, step, exc) from exc
        lv = float(loss.value)
        losses.append(lv)
        if on_step is not None:
            on_step(step + 1, net.with_params(params), opt, lv)
    return TrainResult(net.with_params(params), opt, losses)


def pretrain_fm(cfg: ExperimentConfig, steps: int | None = None, **kw) -> TrainResult:
    steps = cfg.train.fm_steps if steps is None else steps
    return train(init_net(cfg, "fm"), cfg, "fm", steps, **kw)


def finetune_mf(cfg: ExperimentConfig, fm_net: VelocityNet, steps: int | None = None, **kw) -> TrainResult:
    """Duplicate the fm time embedding and train with the MeanFlow objective.

    The bootstrap velocity follows ``cfg.train.v_source``: the frozen fm net
    ("pretrained") or eps - x ("conditional").
    """
    steps = cfg.train.mf_steps if steps is None else steps
    v_source = fm_net if cfg.train.v_source == "pretrained" else "conditional"
    return train(duplicate_time_embedding(fm_net), cfg, "mf", steps, v_source=v_source, **kw)
