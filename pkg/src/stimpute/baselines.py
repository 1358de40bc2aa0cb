"""Reference imputers used as yardsticks: per-node mean, per-node linear
interpolation, Gaussian climatology and graph-neighbour averaging."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .conditioning import interpolate_rows
from .data import Adjacency, NormalizationStats
from .metrics import CRPS_LEVELS


def mean_impute(values, cond_mask) -> np.ndarray:
    """Normalized units: every non-conditioning cell gets the training mean (0)."""
    return np.where(np.asarray(cond_mask) > 0, values, 0.0)


def linear_impute(values, cond_mask) -> np.ndarray:
    return interpolate_rows(np.where(np.asarray(cond_mask) > 0, values, 0.0), cond_mask)


def climatology_quantiles(stats: NormalizationStats, shape) -> np.ndarray:
    """Quantiles (19 x N x L) of a per-node Gaussian with training mean/std."""
    z = norm.ppf(CRPS_LEVELS)
    q = stats.per_node_mean[None, :] + z[:, None] * stats.per_node_std[None, :]
    return np.broadcast_to(q[:, :, None], (len(CRPS_LEVELS), *shape)).copy()


def neighbor_average(raw_values, cond_mask, adjacency: Adjacency, stats: NormalizationStats | None = None) -> np.ndarray:
    """Adjacency-weighted mean of the other nodes' conditioning readings at
    the same step (raw units). Steps with no weighted neighbour fall back to
    the node's training mean when ``stats`` is given, else 0."""
    raw_values = np.asarray(raw_values, dtype=np.float64)
    cond = np.asarray(cond_mask) > 0
    w = adjacency.weights.copy()
    np.fill_diagonal(w, 0.0)
    num = w @ np.where(cond, raw_values, 0.0)
    den = w @ cond.astype(np.float64)
    fallback = stats.per_node_mean[:, None] if stats is not None else 0.0
    est = np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)
    return np.where(cond, raw_values, est)

