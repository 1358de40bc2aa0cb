"""Point and probabilistic imputation metrics.

All functions take raw (denormalized) arrays and a 0/1 evaluation mask.
Quantiles use linear interpolation between order statistics
(``numpy.quantile`` default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CRPS_LEVELS = np.arange(1, 20) * 0.05


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class ImputationResult:
    samples: np.ndarray  # S x N x L
    median: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    plan: object = None
    denormalized: bool = False

    @classmethod
    def from_samples(cls, samples, plan=None, denormalized=False) -> "ImputationResult":
        samples = np.asarray(samples, dtype=np.float64)
        q05, median, q95 = np.quantile(samples, [0.05, 0.5, 0.95], axis=0)
        return cls(samples, median, q05, q95, plan, denormalized)


def _masked(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(mask) > 0
    if pred.shape != truth.shape or truth.shape != mask.shape:
        raise ValueError(f"shape mismatch: {pred.shape}, {truth.shape}, {mask.shape}")
    if not mask.any():
        raise EmptyMaskError("empty evaluation mask")
    return pred[mask], truth[mask]


def mae(pred, truth, mask) -> float:
    p, t = _masked(pred, truth, mask)
    return float(np.abs(p - t).mean())


def mse(pred, truth, mask) -> float:
    p, t = _masked(pred, truth, mask)
    return float(((p - t) ** 2).mean())


def quantile_loss(q_value, x, alpha):
    """Pinball loss (alpha - 1{x < q}) (x - q)."""
    q_value = np.asarray(q_value, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return (alpha - (x < q_value)) * (x - q_value)


def crps_from_quantiles(quantiles, x):
    """Discretized CRPS from quantiles at levels 0.05..0.95 (leading axis)."""
    quantiles = np.asarray(quantiles, dtype=np.float64)
    levels = CRPS_LEVELS.reshape((-1,) + (1,) * (quantiles.ndim - 1))
    return (2 * quantile_loss(quantiles, x, levels)).sum(0) / len(CRPS_LEVELS)


def crps(samples, x):
    """CRPS of an ensemble (leading axis) against the truth ``x``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] == 0:
        raise ValueError("empty ensemble")
    return crps_from_quantiles(np.quantile(samples, CRPS_LEVELS, axis=0), x)


def crps_dataset(result: ImputationResult | np.ndarray, truth, mask) -> float:
    samples = result.samples if isinstance(result, ImputationResult) else np.asarray(result)
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise EmptyMaskError("empty evaluation mask")
    return float(crps(samples[:, mask], np.asarray(truth)[mask]).mean())


def crps_dataset_quantiles(quantiles, truth, mask) -> float:
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise EmptyMaskError("empty evaluation mask")
    return float(crps_from_quantiles(np.asarray(quantiles)[:, mask], np.asarray(truth)[mask]).mean())


def format_report(metrics: dict) -> str:
    width = max(len(k) for k in metrics)
    return "\n".join(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}" for k, v in metrics.items())


def write_report(metrics: dict, table_path, kv_path) -> None:
    with open(table_path, "w") as fh:
        fh.write(format_report(metrics) + "\n")
    with open(kv_path, "w") as fh:
        for k, v in metrics.items():
            fh.write(f"{k}={v!r}\n")
