"""Training loop, batch imputation, checkpointing and LR schedule."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from safetensors import SafetensorError
from safetensors.torch import load_file, save_file

from . import metrics
from .conditioning import interpolate_rows
from .data import Adjacency, NormalizationStats, SpatioTemporalWindow, denormalize
from .diffusion import DiffusionSchedule, build_schedule, forward_sample, sample_imputation, training_loss
from .masking import MaskPlan, StrategyConfig, training_mask
from .model import ModelConfig, NoisePredictor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 200
    lr: float = 1e-3
    milestones: tuple = (0.75, 0.9)
    lr_factors: tuple = (0.1, 0.01)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    seed: int = 0
    grad_clip: float = 1.0
    failed_nodes: tuple = ()  # node indices hidden during training

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be ordered")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based ``epoch``: the base rate, then each factor
    from epoch ceil(milestone * epochs) on."""
    lr = cfg.lr
    for frac, factor in zip(cfg.milestones, cfg.lr_factors):
        if epoch >= math.ceil(frac * cfg.epochs):
            lr = cfg.lr * factor
    return lr


@dataclass
class TrainResult:
    model: NoisePredictor
    losses: list  # per-epoch mean training loss
    lrs: list
    val_losses: list = field(default_factory=list)


def _batch_tensors(windows, plans, dtype):
    values = np.stack([w.values for w in windows])
    cond = np.stack([p.cond_mask for p in plans])
    target = np.stack([p.target_mask for p in plans])
    x_cond = interpolate_rows(np.where(cond > 0, values, 0.0), cond)
    as_t = lambda a: torch.as_tensor(a, dtype=dtype)
    return as_t(values), as_t(x_cond), as_t(cond), as_t(target)


def diffusion_loss(model, sched: DiffusionSchedule, windows, plans, adj, rng: np.random.Generator):
    """Masked noise-regression loss on one batch; ``t`` and noise drawn from ``rng``."""
    dtype = adj.dtype
    x0, x_cond, cond, target = _batch_tensors(windows, plans, dtype)
    t = torch.as_tensor(rng.integers(1, sched.T + 1, size=len(windows)))
    eps = torch.as_tensor(rng.standard_normal(x0.shape), dtype=dtype)
    noisy = forward_sample(x0, t, eps, sched) * (1.0 - cond)
    eps_hat = model(noisy, x_cond, adj, t)
    return training_loss(eps, eps_hat, target)


def _pattern_pool(windows):
    return [w.observed_mask for w in windows]


def train(
    windows: list[SpatioTemporalWindow],
    adjacency: Adjacency,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sched: DiffusionSchedule | None = None,
    val_windows: list[SpatioTemporalWindow] | None = None,
    model: NoisePredictor | None = None,
) -> TrainResult:
    if not windows:
        raise ValueError("no training windows")
    sched = sched or build_schedule(model_cfg.num_steps)
    if sched.T != model_cfg.num_steps:
        raise ValueError("schedule and model disagree on the number of diffusion steps")
    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    if model is None:
        model = NoisePredictor(model_cfg)
    dtype = next(model.parameters()).dtype
    adj = torch.tensor(adjacency.weights, dtype=dtype)
    if train_cfg.failed_nodes:
        from .masking import fail_nodes

        windows = [fail_nodes(w, train_cfg.failed_nodes) for w in windows]
    pool = _pattern_pool(windows)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    result = TrainResult(model, [], [])
    best = (math.inf, None)
    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(len(windows))
        total, count = 0.0, 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [windows[i] for i in order[start : start + train_cfg.batch_size]]
            plans = [training_mask(w, rng, train_cfg.strategy, pool) for w in batch]
            loss = diffusion_loss(model, sched, batch, plans, adj, rng)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        result.losses.append(total / count)
        result.lrs.append(lr)
        msg = f"epoch {epoch + 1}/{train_cfg.epochs} loss {result.losses[-1]:.4f} lr {lr:g}"
        if val_windows:
            val = validation_loss(model, sched, val_windows, adjacency, train_cfg)
            result.val_losses.append(val)
            msg += f" val {val:.4f}"
            if val < best[0]:
                best = (val, copy.deepcopy(model.state_dict()))
        log.info(msg)
    if best[1] is not None:
        model.load_state_dict(best[1])
    return result


@torch.no_grad()
def validation_loss(model, sched, windows, adjacency, train_cfg: TrainConfig, repeats: int = 2) -> float:
    """Masked loss on validation windows under a fixed seed, so epochs compare."""
    rng = np.random.default_rng(train_cfg.seed + 7919)
    dtype = next(model.parameters()).dtype
    adj = torch.tensor(adjacency.weights, dtype=dtype)
    pool = _pattern_pool(windows)
    model.eval()
    total, count = 0.0, 0
    for _ in range(repeats):
        for start in range(0, len(windows), train_cfg.batch_size):
            batch = windows[start : start + train_cfg.batch_size]
            plans = [training_mask(w, rng, train_cfg.strategy, pool) for w in batch]
            total += float(diffusion_loss(model, sched, batch, plans, adj, rng)) * len(batch)
            count += len(batch)
    model.train()
    return total / count


@dataclass
class ImputationReport:
    results: list  # ImputationResult per window, raw units
    metrics: dict
    truth: list
    plans: list


def impute_dataset(
    windows: list[SpatioTemporalWindow],
    adjacency: Adjacency,
    model: NoisePredictor,
    plans: list[MaskPlan],
    stats: NormalizationStats,
    sched: DiffusionSchedule | None = None,
    n_samples: int = 100,
    seed: int = 0,
    truth: list[np.ndarray] | None = None,
) -> ImputationReport:
    """Impute each window's target cells conditioned on its remaining
    observed cells; metrics are on target cells in raw units.

    ``truth`` (normalized, one matrix per window) overrides the window values
    as the reference, e.g. for synthetic data where target cells were never
    observed.
    """
    sched = sched or build_schedule(model.num_steps)
    if adjacency.n_nodes != model.cfg.n_nodes or any(w.n_nodes != model.cfg.n_nodes for w in windows):
        raise CheckpointError(f"checkpoint expects {model.cfg.n_nodes} nodes")
    rng = np.random.default_rng(seed)
    results, truths = [], []
    preds, refs, masks, samples_all = [], [], [], []
    for i, (w, plan) in enumerate(zip(windows, plans)):
        res = sample_imputation(w, plan, adjacency, model, sched, n_samples, rng)
        raw_samples = denormalize(res.samples, stats)
        raw = metrics.ImputationResult.from_samples(raw_samples, plan, denormalized=True)
        ref = denormalize(truth[i] if truth is not None else w.values, stats)
        results.append(raw)
        truths.append(ref)
        preds.append(raw.median)
        refs.append(ref)
        masks.append(plan.target_mask)
        samples_all.append(raw.samples)
    report = {"windows": len(windows), "target_cells": int(sum(m.sum() for m in masks))}
    if report["target_cells"]:
        pred, ref, mask = np.concatenate(preds, 1), np.concatenate(refs, 1), np.concatenate(masks, 1)
        report["mae"] = metrics.mae(pred, ref, mask)
        report["mse"] = metrics.mse(pred, ref, mask)
        report["crps"] = metrics.crps_dataset(np.concatenate(samples_all, 2), ref, mask)
    return ImputationReport(results, report, truths, list(plans))


def _schedule_dict(sched: DiffusionSchedule) -> dict:
    return {"T": sched.T, "beta1": sched.beta1, "betaT": sched.betaT}


def save_checkpoint(path, model: NoisePredictor, sched: DiffusionSchedule, stats: NormalizationStats | None = None, extra: dict | None = None) -> None:
    """Write every parameter plus configs into one safetensors file."""
    tensors = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
    if stats is not None:
        tensors["normalization.mean"] = torch.tensor(stats.per_node_mean, dtype=torch.float64)
        tensors["normalization.std"] = torch.tensor(stats.per_node_std, dtype=torch.float64)
    header = {
        "version": CHECKPOINT_VERSION,
        "model": model.cfg.to_dict(),
        "schedule": _schedule_dict(sched),
        "extra": extra or {},
    }
    save_file(tensors, str(path), metadata={"stimpute": json.dumps(header, sort_keys=True)})


def load_checkpoint(path):
    """Return ``(model, schedule, stats, extra)``."""
    try:
        from safetensors import safe_open

        with safe_open(str(path), framework="pt") as fh:
            meta = fh.metadata() or {}
        tensors = load_file(str(path))
    except (SafetensorError, OSError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if "stimpute" not in meta:
        raise CheckpointError(f"{path} is not a model checkpoint")
    header = json.loads(meta["stimpute"])
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    cfg = ModelConfig(**header["model"])
    sched = build_schedule(**header["schedule"])
    stats = None
    if "normalization.mean" in tensors:
        stats = NormalizationStats(
            tensors.pop("normalization.mean").numpy(), tensors.pop("normalization.std").numpy()
        )
    model = NoisePredictor(cfg)
    dtype = next(iter(tensors.values())).dtype
    model.to(dtype)
    try:
        model.load_state_dict(tensors)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint tensors do not match the model: {exc}") from exc
    return model, sched, stats, header.get("extra", {})


def config_dict(model_cfg: ModelConfig, train_cfg: TrainConfig, sched: DiffusionSchedule) -> dict:
    return {"model": model_cfg.to_dict(), "train": asdict(train_cfg), "schedule": _schedule_dict(sched)}
