"""Stochastic variational training of the memory model, and belief read-out."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from iol.diff_engine import tensor as T
from iol.diff_engine.optim import AdamState, adam_step, clip_grad_norm, collect_grads
from iol.diff_engine.tensor import no_grad
from iol.model import (
    Batch,
    EffectBelief,
    IOLModel,
    ModelConfig,
    NumericalError,
    elbo_terms,
    init_model,
    iter_batches,
    posterior_mean_path,
)
from iol.trajectory_store import DatasetSplit, TrajectoryRecord, ValidationError, check_dimensions

LR_SCHEDULES = ("constant", "cosine")


class TrainingError(NumericalError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    mc_samples: int = 1
    seed: int = 0
    clip_norm: float = 5.0
    patience: int = 10
    kl_warmup_epochs: int = 5
    lr_schedule: str = "constant"
    min_lr_ratio: float = 0.1
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.mc_samples < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and mc_samples >= 1 required")
        if self.patience < 1 or self.kl_warmup_epochs < 0:
            raise ValueError("patience >= 1 and kl_warmup_epochs >= 0 required")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")


@dataclass
class TrainReport:
    epoch: list[int] = field(default_factory=list)
    train_objective: list[float] = field(default_factory=list)
    train_nll: list[float] = field(default_factory=list)
    train_kl: list[float] = field(default_factory=list)
    kl_weight: list[float] = field(default_factory=list)
    val_objective: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    val_kl: list[float] = field(default_factory=list)
    step_objective: list[float] = field(default_factory=list)
    step_nll: list[float] = field(default_factory=list)
    step_kl: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_clock: float = 0.0
    stopped_early: bool = False

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


def _lr_at(config: TrainConfig, epoch: int) -> float:
    if config.lr_schedule == "constant" or config.epochs <= 1:
        return config.lr
    frac = min(epoch / (config.epochs - 1), 1.0)
    low = config.lr * config.min_lr_ratio
    return low + 0.5 * (config.lr - low) * (1.0 + math.cos(math.pi * frac))


def evaluate_objective(model: IOLModel, records: Sequence[TrajectoryRecord], seed,
                       mc_samples: int = 1, batch_size: int = 256) -> tuple[float, float]:
    """Mean per-trajectory (nll, kl) of the negative ELBO with a fixed seed."""
    rng = np.random.default_rng(seed)
    nll_sum = kl_sum = 0.0
    n = 0
    with no_grad():
        for batch in iter_batches(records, batch_size):
            nll, kl = elbo_terms(model, batch, rng, mc_samples)
            nll_sum += float(nll.data.sum())
            kl_sum += float(kl.data.sum())
            n += batch.size
    return nll_sum / n, kl_sum / n


def snapshot(model: IOLModel) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in model.parameters()}


def restore(model: IOLModel, state: dict[str, np.ndarray]) -> None:
    for p in model.parameters():
        p.data[...] = state[p.name]


def train(
    dataset: DatasetSplit,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    model: IOLModel | None = None,
    optimizer: AdamState | None = None,
    history: TrainReport | None = None,
    log=None,
) -> tuple[IOLModel, TrainReport, AdamState]:
    """Minimise the negative ELBO by mini-batch Adam with early stopping.

    Passing ``model``, ``optimizer`` and ``history`` from an earlier run
    resumes it: epoch numbering continues from ``history``.  The returned
    model carries the parameters of the best validation epoch.
    """
    if not dataset.train:
        raise ValidationError("training split is empty")
    d = check_dimensions(dataset.train + dataset.validation + dataset.test)
    if model is None:
        model = init_model(model_config or ModelConfig(d=d), seed=config.seed)
    elif model.config.d != d:
        raise ValidationError(f"model expects d={model.config.d}, data has d={d}")
    params = model.parameters()
    optimizer = optimizer or AdamState()
    report = history or TrainReport()
    start_epoch = report.epoch[-1] + 1 if report.epoch else 0

    steps_per_epoch = sum(1 for _ in iter_batches(dataset.train, config.batch_size))
    warmup_steps = config.kl_warmup_epochs * steps_per_epoch
    global_step = start_epoch * steps_per_epoch

    best_value = math.inf
    best_state = snapshot(model)
    if report.val_objective:
        best_value = min(report.val_objective)
    stale = 0
    started = time.perf_counter()

    for epoch in range(start_epoch, start_epoch + config.epochs):
        rng = np.random.default_rng([config.seed, 1, epoch])
        lr = _lr_at(config, epoch - start_epoch)
        tot_nll = tot_kl = 0.0
        n_seen = 0
        for b_idx, batch in enumerate(iter_batches(dataset.train, config.batch_size, rng)):
            weight = 1.0 if warmup_steps == 0 else min(1.0, global_step / warmup_steps)
            for p in params:
                p.zero_grad()
            nll, kl = elbo_terms(model, batch, rng, config.mc_samples)
            nll_mean = T.mean(nll)
            kl_mean = T.mean(kl)
            loss = nll_mean + kl_mean * weight
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
            loss.backward()
            grads = collect_grads(params)
            clip_grad_norm(grads, config.clip_norm)
            try:
                adam_step(params, grads, optimizer, lr)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b_idx}: {exc}") from exc
            step_nll = float(nll_mean.data)
            step_kl = float(kl_mean.data)
            report.step_nll.append(step_nll)
            report.step_kl.append(step_kl)
            report.step_objective.append(step_nll + step_kl)
            tot_nll += step_nll * batch.size
            tot_kl += step_kl * weight * batch.size
            n_seen += batch.size
            global_step += 1

        train_nll, train_kl = tot_nll / n_seen, tot_kl / n_seen
        report.epoch.append(epoch)
        report.train_nll.append(train_nll)
        report.train_kl.append(train_kl)
        report.train_objective.append(train_nll + train_kl)
        report.kl_weight.append(weight)

        if dataset.validation:
            v_nll, v_kl = evaluate_objective(model, dataset.validation, [config.seed, 2],
                                             config.mc_samples, config.eval_batch_size)
        else:
            v_nll, v_kl = train_nll, train_kl
        report.val_nll.append(v_nll)
        report.val_kl.append(v_kl)
        report.val_objective.append(v_nll + v_kl)
        if log is not None:
            log(f"epoch {epoch}: train {train_nll + train_kl:.4f} "
                f"(nll {train_nll:.4f}) val {v_nll + v_kl:.4f} (nll {v_nll:.4f})")

        if v_nll + v_kl < best_value:
            best_value = v_nll + v_kl
            best_state = snapshot(model)
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                report.stopped_early = True
                break

    restore(model, best_state)
    report.wall_clock += time.perf_counter() - started
    return model, report, optimizer


# ------------------------------------------------------------------ belief read-out


def infer_beliefs(model: IOLModel, traj: TrajectoryRecord) -> list[EffectBelief]:
    if traj.d != model.config.d:
        raise ValidationError(f"trajectory {traj.id!r} has d={traj.d}, model expects {model.config.d}")
    beliefs = posterior_mean_path(model, Batch.from_records([traj]))
    return [
        EffectBelief(
            t,
            beliefs.omega1[0, t].copy(),
            float(beliefs.tau[0, t]),
            0.0,
            float(beliefs.tau[0, t]),
            float(beliefs.pi[0, t]),
            beliefs.memory_mean[0, t].copy(),
            beliefs.memory_std[0, t].copy(),
        )
        for t in range(traj.T)
    ]


@dataclass
class TrajectoryBeliefs:
    omega1: np.ndarray  # (T, d)
    tau: np.ndarray  # (T,)
    pi: np.ndarray  # (T,)


def infer_all(model: IOLModel, records: Sequence[TrajectoryRecord],
              batch_size: int = 256) -> dict[str, TrajectoryBeliefs]:
    """Posterior-mean beliefs for many trajectories, keyed by id, in input order."""
    check_dimensions(records)
    out = {}
    for batch in iter_batches(records, batch_size):
        b = posterior_mean_path(model, batch)
        for i, tid in enumerate(batch.ids):
            out[tid] = TrajectoryBeliefs(b.omega1[i], b.tau[i], b.pi[i])
    return {r.id: out[r.id] for r in records}
