"""Noise schedule, forward noising, reverse steps, masked loss and the
conditional sampling loop.

Step indices are 1-based (``t = 1..T``); schedule arrays are stored 0-based,
so ``beta[t - 1]`` is the variance of step ``t``. The array helpers accept
numpy arrays or torch tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import interpolate_rows
from .metrics import ImputationResult


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray
    beta1: float
    betaT: float


def build_schedule(T: int = 50, beta1: float = 1e-4, betaT: float = 0.2) -> DiffusionSchedule:
    """Quadratic schedule: sqrt(beta) linear in t between the endpoints."""
    if T < 2:
        raise ScheduleError("need at least two diffusion steps")
    if not 0 < beta1 < betaT < 1:
        raise ScheduleError("need 0 < beta1 < betaT < 1")
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = ((T - t) / (T - 1) * np.sqrt(beta1) + (t - 1) / (T - 1) * np.sqrt(betaT)) ** 2
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma2 = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return DiffusionSchedule(T, beta, alpha, alpha_bar, sigma2, float(beta1), float(betaT))


def _check_step(t, sched: DiffusionSchedule):
    arr = np.asarray(t.cpu() if torch.is_tensor(t) else t)
    if (arr < 1).any() or (arr > sched.T).any():
        raise ScheduleError(f"diffusion step outside 1..{sched.T}")


def _coef(values: np.ndarray, t, like):
    """Schedule entries for step(s) ``t`` broadcastable against ``like``."""
    idx = (t.cpu().numpy() if torch.is_tensor(t) else np.asarray(t)) - 1
    c = values[idx]
    if np.ndim(c):
        c = c.reshape(c.shape + (1,) * (like.ndim - c.ndim))
    if torch.is_tensor(like):
        return torch.as_tensor(c, dtype=like.dtype, device=like.device)
    return c


def forward_sample(x0, t, eps, sched: DiffusionSchedule):
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {tuple(x0.shape)} vs {tuple(eps.shape)}")
    _check_step(t, sched)
    ab = _coef(sched.alpha_bar, t, x0)
    return ab**0.5 * x0 + (1.0 - ab) ** 0.5 * eps


def reverse_step(xt, eps_hat, t: int, sched: DiffusionSchedule, noise=None):
    """One ancestral step: mean (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t),
    plus sigma_t * noise."""
    if xt.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch {tuple(xt.shape)} vs {tuple(eps_hat.shape)}")
    _check_step(t, sched)
    i = int(t) - 1
    coef = float(sched.beta[i] / np.sqrt(1.0 - sched.alpha_bar[i]))
    mean = (xt - coef * eps_hat) / float(np.sqrt(sched.alpha[i]))
    if noise is None or sched.sigma2[i] == 0.0:
        return mean
    if noise.shape != xt.shape:
        raise ValueError("noise shape mismatch")
    return mean + float(np.sqrt(sched.sigma2[i])) * noise


def training_loss(eps, eps_hat, target_mask):
    """Mean squared noise residual over target cells only (0 if none)."""
    if eps.shape != eps_hat.shape or eps.shape != target_mask.shape:
        raise ValueError("shape mismatch in training_loss")
    if torch.is_tensor(eps_hat):
        sel = torch.as_tensor(target_mask, device=eps_hat.device) > 0
        if not bool(sel.any()):
            return eps_hat.sum() * 0.0
        return ((eps - eps_hat)[sel] ** 2).mean()
    sel = np.asarray(target_mask) > 0
    if not sel.any():
        return 0.0
    return float(((np.asarray(eps) - np.asarray(eps_hat))[sel] ** 2).mean())


@torch.no_grad()
def sample_imputation(
    window,
    plan,
    adjacency,
    model,
    sched: DiffusionSchedule,
    n_samples: int = 100,
    rng: np.random.Generator | None = None,
    chunk: int = 100,
) -> ImputationResult:
    """Draw ``n_samples`` imputations of the non-conditioning cells.

    Returned samples are in the window's (normalized) units; conditioning
    cells carry their observed values verbatim.
    """
    if getattr(model, "num_steps", sched.T) != sched.T:
        raise ScheduleError(f"model was built for T={model.num_steps}, schedule has T={sched.T}")
    rng = rng if rng is not None else np.random.default_rng()
    cond = np.asarray(plan.cond_mask)
    cond_values = np.where(cond > 0, window.values, 0.0)
    x_cond = interpolate_rows(cond_values, cond)
    dtype = next(model.parameters()).dtype
    adj = torch.tensor(np.asarray(adjacency.weights if hasattr(adjacency, "weights") else adjacency), dtype=dtype)
    free = torch.as_tensor(1.0 - cond, dtype=dtype)
    was_training = model.training
    model.eval()
    out = []
    for start in range(0, n_samples, chunk):
        b = min(chunk, n_samples - start)
        xc = torch.as_tensor(x_cond, dtype=dtype).expand(b, *x_cond.shape)
        x = torch.as_tensor(rng.standard_normal((b, *x_cond.shape)), dtype=dtype) * free
        prior = model.extract_prior(xc[:1], adj).expand(b, -1, -1, -1) if hasattr(model, "extract_prior") else None
        for t in range(sched.T, 0, -1):
            steps = torch.full((b,), t, dtype=torch.long)
            eps_hat = model(x, xc, adj, steps, prior=prior) if prior is not None else model(x, xc, adj, steps)
            noise = torch.as_tensor(rng.standard_normal((b, *x_cond.shape)), dtype=dtype) if t > 1 else None
            x = reverse_step(x, eps_hat, t, sched, noise) * free
        out.append(x.double().numpy())
    model.train(was_training)
    samples = np.concatenate(out, 0)
    samples = np.where(cond[None] > 0, cond_values[None], samples)
    return ImputationResult.from_samples(samples, plan)
