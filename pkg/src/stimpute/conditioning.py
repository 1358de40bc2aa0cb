"""Per-node linear interpolation of the conditioning values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SpatioTemporalWindow
from .masking import MaskPlan


@dataclass(frozen=True)
class ConditionalInfo:
    values: np.ndarray
    plan: MaskPlan


def interpolate_rows(values: np.ndarray, cond_mask: np.ndarray) -> np.ndarray:
    """Fill each row of ``values`` from its ``cond_mask`` cells.

    Interior gaps are linear in time, edges hold the nearest conditioning
    value, rows with no conditioning cell become 0. Works on any leading
    batch shape.
    """
    values = np.asarray(values, dtype=np.float64)
    cond = np.asarray(cond_mask) > 0
    flat_v = values.reshape(-1, values.shape[-1])
    flat_c = cond.reshape(-1, cond.shape[-1])
    out = np.zeros_like(flat_v)
    grid = np.arange(values.shape[-1])
    for r in range(flat_v.shape[0]):
        known = flat_c[r]
        if known.all():
            out[r] = flat_v[r]
        elif known.any():
            # np.interp holds the end values outside the known range
            out[r] = np.interp(grid, grid[known], flat_v[r, known])
    return out.reshape(values.shape)


def linear_interpolate(window: SpatioTemporalWindow, plan: MaskPlan) -> ConditionalInfo:
    return ConditionalInfo(interpolate_rows(window.values, plan.cond_mask), plan)
