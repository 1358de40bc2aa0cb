"""Training mask strategies and evaluation missing-pattern simulation.

Every generator returns a :class:`MaskPlan` splitting the observed cells of a
window into an imputation target and conditioning evidence. Randomness comes
only from the ``numpy.random.Generator`` passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import SpatioTemporalWindow


class MaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MaskPlan:
    target_mask: np.ndarray
    cond_mask: np.ndarray
    runs: tuple = field(default=(), compare=False)  # (node, start, length) of any block runs

    def __post_init__(self):
        target = np.asarray(self.target_mask, dtype=np.float64)
        cond = np.asarray(self.cond_mask, dtype=np.float64)
        if target.shape != cond.shape:
            raise MaskError("target and conditioning masks differ in shape")
        if (target * cond).any():
            raise MaskError("target and conditioning masks overlap")
        object.__setattr__(self, "target_mask", target)
        object.__setattr__(self, "cond_mask", cond)

    def __eq__(self, other):
        if not isinstance(other, MaskPlan):
            return NotImplemented
        return np.array_equal(self.target_mask, other.target_mask) and np.array_equal(self.cond_mask, other.cond_mask)

    __hash__ = None

    @classmethod
    def from_target(cls, window: SpatioTemporalWindow, target, runs=()) -> "MaskPlan":
        observed = window.observed_mask > 0
        target = np.asarray(target, dtype=bool) & observed
        return cls(target.astype(np.float64), (observed & ~target).astype(np.float64), tuple(runs))

    def check(self, window: SpatioTemporalWindow) -> None:
        if self.target_mask.shape != window.values.shape:
            raise MaskError("plan shape does not match window")
        if ((self.target_mask + self.cond_mask) > window.observed_mask).any():
            raise MaskError("plan marks cells that were never observed")

    def save(self, prefix) -> None:
        np.savetxt(f"{prefix}_target.txt", self.target_mask, fmt="%d")
        np.savetxt(f"{prefix}_cond.txt", self.cond_mask, fmt="%d")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "hybrid"  # point | block | hybrid
    hybrid_alternative: str = "block"  # block | historical
    block_prob_max: float = 0.15
    extra_point_fraction: float = 0.05
    hybrid_point_prob: float = 0.5
    min_block: int | None = None  # defaults to ceil(L / 2)
    max_block: int | None = None  # defaults to L

    def __post_init__(self):
        if self.kind not in ("point", "block", "hybrid"):
            raise MaskError(f"unknown strategy {self.kind!r}")
        if self.hybrid_alternative not in ("block", "historical"):
            raise MaskError(f"unknown hybrid alternative {self.hybrid_alternative!r}")
        for name in ("block_prob_max", "extra_point_fraction", "hybrid_point_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise MaskError(f"{name} must lie in [0, 1]")

    def block_range(self, length: int) -> tuple[int, int]:
        lo = self.min_block if self.min_block is not None else math.ceil(length / 2)
        hi = self.max_block if self.max_block is not None else length
        if not 1 <= lo <= hi <= length:
            raise MaskError(f"block length range [{lo}, {hi}] outside [1, {length}]")
        return lo, hi


def _choose_observed(observed: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly round(fraction * n_observed) observed cells, uniformly."""
    flat = np.flatnonzero(observed)
    count = int(round(fraction * flat.size))
    out = np.zeros(observed.size, dtype=bool)
    if count:
        out[rng.choice(flat, size=count, replace=False)] = True
    return out.reshape(observed.shape)


def point_mask(window: SpatioTemporalWindow, rng: np.random.Generator, m: float | None = None) -> MaskPlan:
    """Mask m% of observed cells, with m ~ U[0, 100] unless given."""
    if m is None:
        m = rng.uniform(0.0, 100.0)
    target = _choose_observed(window.observed_mask > 0, m / 100.0, rng)
    return MaskPlan.from_target(window, target)


def block_mask(window: SpatioTemporalWindow, rng: np.random.Generator, cfg: StrategyConfig = StrategyConfig()) -> MaskPlan:
    n, length = window.values.shape
    lo, hi = cfg.block_range(length)
    observed = window.observed_mask > 0
    target = np.zeros((n, length), dtype=bool)
    runs = []
    # one run-probability per node, drawn from [0, ceiling]
    probs = rng.uniform(0.0, cfg.block_prob_max, size=n)
    hit = rng.random(n) < probs
    for i in np.flatnonzero(hit):
        run = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, length - run + 1))
        target[i, start : start + run] = True
        runs.append((int(i), start, run))
    target |= _choose_observed(observed, cfg.extra_point_fraction, rng)
    return MaskPlan.from_target(window, target, runs)


def historical_mask(window: SpatioTemporalWindow, rng: np.random.Generator, pool: Sequence[np.ndarray]) -> MaskPlan:
    """Reuse another sample's missing pattern: cells observed here but
    missing in the drawn pool pattern become the target."""
    if not len(pool):
        raise MaskError("historical masking needs a nonempty pattern pool")
    pattern = np.asarray(pool[int(rng.integers(len(pool)))])
    if pattern.shape != window.values.shape:
        raise MaskError("pool pattern shape does not match window")
    return MaskPlan.from_target(window, pattern <= 0)


def hybrid_mask(
    window: SpatioTemporalWindow,
    rng: np.random.Generator,
    cfg: StrategyConfig = StrategyConfig(),
    pool: Sequence[np.ndarray] | None = None,
    coin: bool | None = None,
) -> MaskPlan:
    """Point strategy with probability ``hybrid_point_prob``, otherwise the
    block strategy or a historical pattern. ``coin`` forces the branch
    (True = point) without consuming a draw."""
    if cfg.hybrid_alternative == "historical" and not pool:
        raise MaskError("historical hybrid mode needs a nonempty pattern pool")
    if coin is None:
        coin = bool(rng.random() < cfg.hybrid_point_prob)
    if coin:
        return point_mask(window, rng)
    if cfg.hybrid_alternative == "historical":
        return historical_mask(window, rng, pool)
    return block_mask(window, rng, cfg)


def training_mask(window, rng, cfg: StrategyConfig, pool=None) -> MaskPlan:
    if cfg.kind == "point":
        return point_mask(window, rng)
    if cfg.kind == "block":
        return block_mask(window, rng, cfg)
    return hybrid_mask(window, rng, cfg, pool)


@dataclass(frozen=True)
class EvalPattern:
    kind: str  # point | block | failure
    point_fraction: float = 0.25
    block_point_fraction: float = 0.05
    block_prob: float = 0.0015
    min_minutes: float = 60.0
    max_minutes: float = 240.0
    failed_nodes: tuple = ()


def parse_pattern(text: str) -> EvalPattern:
    """``point`` | ``block`` | ``failure:<id>[,<id>...]``"""
    text = text.strip()
    if text in ("point", "point25"):
        return EvalPattern("point")
    if text == "block":
        return EvalPattern("block")
    if text.startswith("failure:"):
        ids = tuple(s.strip() for s in text.split(":", 1)[1].split(",") if s.strip())
        if not ids:
            raise MaskError("failure pattern needs at least one node id")
        return EvalPattern("failure", failed_nodes=ids)
    raise MaskError(f"unknown pattern {text!r}; expected point, block or failure:<ids>")


def sampling_minutes(window: SpatioTemporalWindow) -> float:
    step = np.diff(np.asarray(window.timestamps)[:2])[0]
    if isinstance(step, np.timedelta64):
        return step / np.timedelta64(1, "m")
    return float(step)


def block_run_steps(pattern: EvalPattern, step_minutes: float) -> tuple[int, int]:
    lo = max(1, int(round(pattern.min_minutes / step_minutes)))
    hi = max(lo, int(round(pattern.max_minutes / step_minutes)))
    return lo, hi


def simulate_eval_missing(
    window: SpatioTemporalWindow,
    pattern: EvalPattern | str,
    rng: np.random.Generator,
    step_minutes: float | None = None,
) -> MaskPlan:
    """Inject evaluation faults into the observed cells of ``window``.

    Intended to run on a whole split (a long window) before cutting it into
    evaluation windows, so block runs may cross window borders.
    """
    if isinstance(pattern, str):
        pattern = parse_pattern(pattern)
    observed = window.observed_mask > 0
    n, length = observed.shape
    if pattern.kind == "point":
        target = rng.random((n, length)) < pattern.point_fraction
        return MaskPlan.from_target(window, target)
    if pattern.kind == "block":
        if step_minutes is None:
            step_minutes = sampling_minutes(window)
        lo, hi = block_run_steps(pattern, step_minutes)
        target = rng.random((n, length)) < pattern.block_point_fraction
        starts = rng.random((n, length)) < pattern.block_prob
        runs = []
        for i, j in zip(*np.nonzero(starts)):
            run = int(rng.integers(lo, hi + 1))
            target[i, j : j + run] = True  # clipped at the window edge
            runs.append((int(i), int(j), run))
        return MaskPlan.from_target(window, target, runs)
    if pattern.kind == "failure":
        target = np.zeros((n, length), dtype=bool)
        for nid in pattern.failed_nodes:
            if nid not in window.node_ids:
                raise MaskError(f"unknown node id {nid!r}")
            target[window.node_ids.index(nid)] = True
        return MaskPlan.from_target(window, target)
    raise MaskError(f"unknown pattern kind {pattern.kind!r}")


def fail_nodes(window: SpatioTemporalWindow, nodes: Sequence[int]) -> SpatioTemporalWindow:
    """Drop every observation of the given node rows (sensor outage)."""
    mask = window.observed_mask.copy()
    mask[list(nodes)] = 0.0
    return window.with_values(window.values, mask)


def slice_plan(plan: MaskPlan, start: int, stop: int) -> MaskPlan:
    return MaskPlan(plan.target_mask[:, start:stop], plan.cond_mask[:, start:stop])


def simulate_eval_plans(windows: Sequence[SpatioTemporalWindow], pattern, rng: np.random.Generator) -> list[MaskPlan]:
    """Evaluation plans for a list of windows.

    Back-to-back windows (each starting one step after the previous ends) are
    joined first so block runs may cross window borders; otherwise each window
    is simulated on its own.
    """
    if not windows:
        return []
    stamps = [np.asarray(w.timestamps) for w in windows]
    contiguous = len(windows) > 1 and all(
        len(a) > 1 and b[0] - a[-1] == a[1] - a[0] for a, b in zip(stamps[:-1], stamps[1:])
    )
    if not contiguous:
        return [simulate_eval_missing(w, pattern, rng) for w in windows]
    span = SpatioTemporalWindow(
        np.concatenate([w.values for w in windows], 1),
        np.concatenate([w.observed_mask for w in windows], 1),
        windows[0].node_ids,
        np.concatenate(stamps),
    )
    plan = simulate_eval_missing(span, pattern, rng)
    edges = np.cumsum([0] + [w.length for w in windows])
    return [slice_plan(plan, a, b) for a, b in zip(edges[:-1], edges[1:])]
