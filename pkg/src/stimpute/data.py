"""Spatiotemporal observation windows, graph construction, normalization and
a synthetic sensor-network generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SpatioTemporalWindow:
    """An N x L block of readings with its observed-value mask."""

    values: np.ndarray
    observed_mask: np.ndarray
    node_ids: tuple
    timestamps: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.observed_mask)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(f"values {values.shape} and mask {mask.shape} must be matching N x L matrices")
        if not np.isin(mask, (0, 1)).all():
            raise DataError("observed_mask entries must be 0 or 1")
        n, length = values.shape
        if n < 1 or length < 2:
            raise DataError("a window needs N >= 1 and L >= 2")
        if len(self.node_ids) != n or len(self.timestamps) != length:
            raise DataError("node_ids / timestamps do not match the value matrix")
        _check_regular(np.asarray(self.timestamps))
        mask = mask.astype(np.float64)
        values = np.where(mask > 0, values, 0.0)
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed_mask", mask)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, observed_mask=None) -> "SpatioTemporalWindow":
        mask = self.observed_mask if observed_mask is None else observed_mask
        return SpatioTemporalWindow(values, mask, self.node_ids, self.timestamps)


@dataclass(frozen=True)
class Adjacency:
    weights: np.ndarray
    self_loops: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DataError("adjacency must be square")
        if (w < 0).any() or not np.isfinite(w).all():
            raise DataError("adjacency weights must be finite and nonnegative")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def save(self, path) -> None:
        np.savetxt(path, self.weights, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "Adjacency":
        return cls(np.atleast_2d(np.loadtxt(path)))


@dataclass(frozen=True)
class NormalizationStats:
    per_node_mean: np.ndarray
    per_node_std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.per_node_mean, dtype=np.float64).copy()
        std = np.asarray(self.per_node_std, dtype=np.float64).copy()
        if mean.shape != std.shape or mean.ndim != 1:
            raise DataError("mean/std must be equal-length vectors")
        if (std <= 0).any():
            raise DataError("std entries must be positive")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "per_node_mean", mean)
        object.__setattr__(self, "per_node_std", std)


@dataclass(frozen=True)
class DataConfig:
    window_length: int = 24
    train_stride: int | None = None  # defaults to L // 2
    eval_stride: int | None = None  # defaults to L
    split: tuple = (0.7, 0.1, 0.2)
    missing_tokens: tuple = ("", "nan", "NaN", "NA")
    kernel_width: float | None = None  # defaults to std of pairwise distances
    threshold: float = 0.1

    def strides(self) -> tuple[int, int]:
        length = self.window_length
        train = self.train_stride or max(1, length // 2)
        return train, self.eval_stride or length


@dataclass(frozen=True)
class SyntheticSpec:
    node_count: int = 20
    window_length: int = 24
    n_steps: int = 2400
    coord_seed: int = 0
    n_factors: int = 3
    noise_level: float = 0.1
    seed: int = 0
    missing_rate: float = 0.0
    step_minutes: int = 5
    spatial_scale: float = 2.0

    def __post_init__(self):
        for name in ("node_count", "window_length", "n_steps", "n_factors", "step_minutes"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.noise_level < 0:
            raise DataError("noise_level must be >= 0")
        if not 0 <= self.missing_rate < 1:
            raise DataError("missing_rate must be in [0, 1)")
        if self.n_steps < self.window_length:
            raise DataError("n_steps must cover at least one window")


@dataclass
class SyntheticCorpus:
    """Full series produced by :func:`synthesize`, kept whole so callers can
    split and window it like a file-backed dataset."""

    values: np.ndarray  # N x S raw readings with missing cells zeroed
    observed_mask: np.ndarray
    truth: np.ndarray  # N x S complete readings, before missingness is applied
    coords: np.ndarray
    node_ids: tuple
    timestamps: np.ndarray
    adjacency: Adjacency
    windows: list = field(default_factory=list)


def _check_regular(timestamps: np.ndarray) -> None:
    if len(timestamps) < 2:
        return
    diffs = np.diff(timestamps)
    if not (diffs > diffs.dtype.type(0)).all():
        raise DataError("timestamps must be strictly increasing")
    if not (diffs == diffs[0]).all():
        raise DataError("timestamps must have a constant step")


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def default_kernel_width(coords) -> float:
    dist = pairwise_distances(coords)
    off = dist[~np.eye(len(dist), dtype=bool)]
    width = float(off.std()) if off.size else 1.0
    return width if width > 0 else 1.0


def build_adjacency(coords, kernel_width: float | None = None, threshold: float = 0.1) -> Adjacency:
    """Thresholded Gaussian kernel over Euclidean distances, unit diagonal."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise DataError("coords must be an N x 2 array")
    if not np.isfinite(coords).all():
        raise DataError("coordinates must be finite")
    if kernel_width is None:
        kernel_width = default_kernel_width(coords)
    if kernel_width <= 0:
        raise DataError("kernel_width must be positive")
    if not 0 <= threshold < 1:
        raise DataError("threshold must lie in [0, 1)")
    dist = pairwise_distances(coords)
    w = np.exp(-(dist**2) / kernel_width**2)
    w[w < threshold] = 0.0
    np.fill_diagonal(w, 1.0)
    return Adjacency(w)


def compute_stats(values, mask, adjacency: Adjacency | None = None) -> NormalizationStats:
    """Per-node mean/std over observed entries only.

    Constant nodes get std 1. Nodes with no observation at all borrow the
    adjacency-weighted mean and std of their observed neighbours (or the
    global average without a graph).
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n = values.shape[0]
    count = mask.sum(1)
    seen = count > 0
    mean = np.zeros(n)
    std = np.ones(n)
    for i in np.flatnonzero(seen):
        obs = values[i, mask[i]]
        mean[i] = obs.mean()
        s = obs.std()
        std[i] = s if s > 1e-12 else 1.0
    if seen.any() and not seen.all():
        for i in np.flatnonzero(~seen):
            w = np.ones(n) if adjacency is None else adjacency.weights[i].copy()
            w = np.where(seen, w, 0.0)
            if w.sum() <= 0:
                w = seen.astype(np.float64)
            w = w / w.sum()
            mean[i] = w @ mean
            std[i] = w @ std
    return NormalizationStats(mean, std)


def normalize(values, stats: NormalizationStats, mask=None) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != stats.per_node_mean.shape[0]:
        raise DataError("node count does not match normalization stats")
    z = (values - stats.per_node_mean[:, None]) / stats.per_node_std[:, None]
    if mask is not None:
        z = np.where(np.asarray(mask) > 0, z, 0.0)
    return z


def denormalize(values, stats: NormalizationStats) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] != stats.per_node_mean.shape[0]:
        raise DataError("node count does not match normalization stats")
    return values * stats.per_node_std[:, None] + stats.per_node_mean[:, None]


def make_windows(values, mask, node_ids, timestamps, length: int, stride: int) -> list[SpatioTemporalWindow]:
    values = np.asarray(values)
    total = values.shape[1]
    windows = []
    for start in range(0, total - length + 1, stride):
        sl = slice(start, start + length)
        windows.append(SpatioTemporalWindow(values[:, sl], mask[:, sl], node_ids, timestamps[sl]))
    return windows


def split_bounds(total: int, split: Sequence[float]) -> list[tuple[int, int]]:
    fractions = np.asarray(split, dtype=np.float64)
    edges = np.round(np.concatenate([[0.0], np.cumsum(fractions / fractions.sum())]) * total).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def read_series(series_file, missing_tokens=("", "nan", "NaN", "NA")):
    """Read a time x node table: header of node ids, first column timestamps."""
    with open(series_file, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{series_file}: no data rows")
    node_ids = tuple(h.strip() for h in rows[0][1:])
    stamps, data, mask = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(node_ids) + 1:
            raise DataError(f"{series_file}:{lineno}: expected {len(node_ids) + 1} columns, got {len(row)}")
        stamps.append(np.datetime64(row[0].strip()))
        cells = [c.strip() for c in row[1:]]
        mask.append([c not in missing_tokens for c in cells])
        data.append([float(c) if c not in missing_tokens else 0.0 for c in cells])
    timestamps = np.array(stamps)
    _check_regular(timestamps)
    return node_ids, timestamps, np.array(data).T, np.array(mask, dtype=np.float64).T


def read_coords(coords_file) -> tuple[tuple, np.ndarray]:
    ids, coords = [], []
    with open(coords_file, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                pair = [float(row[1]), float(row[2])]
            except ValueError:
                if not ids:  # header line
                    continue
                raise DataError(f"{coords_file}: bad coordinate row {row!r}")
            ids.append(row[0].strip())
            coords.append(pair)
    return tuple(ids), np.array(coords, dtype=np.float64)


def write_series(path, values, mask, node_ids, timestamps) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *node_ids])
        for j, ts in enumerate(timestamps):
            cells = [repr(float(values[i, j])) if mask[i, j] else "" for i in range(len(node_ids))]
            writer.writerow([str(ts), *cells])


def write_coords(path, node_ids, coords) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "lat", "lon"])
        for nid, (a, b) in zip(node_ids, coords):
            writer.writerow([nid, repr(float(a)), repr(float(b))])


def load_series(series_file, coords_file, config: DataConfig = DataConfig()):
    """Load a sensor table and coordinates into normalized windows.

    Returns ``(windows, adjacency, stats)`` where ``windows`` maps ``"train"``,
    ``"val"`` and ``"test"`` to window lists. Statistics come from observed
    training entries only.
    """
    node_ids, timestamps, raw, mask = read_series(series_file, config.missing_tokens)
    coord_ids, coords = read_coords(coords_file)
    if len(coord_ids) != len(node_ids):
        raise DataError(f"series has {len(node_ids)} nodes but coordinates file has {len(coord_ids)}")
    if set(coord_ids) != set(node_ids):
        raise DataError("node ids differ between series and coordinates files")
    order = [coord_ids.index(n) for n in node_ids]
    adjacency = build_adjacency(coords[order], config.kernel_width, config.threshold)
    return prepare_windows(raw, mask, node_ids, timestamps, adjacency, config)


def prepare_windows(raw, mask, node_ids, timestamps, adjacency: Adjacency, config: DataConfig):
    total = raw.shape[1]
    bounds = split_bounds(total, config.split)
    train_lo, train_hi = bounds[0]
    if train_hi - train_lo < config.window_length or not mask[:, train_lo:train_hi].any():
        raise DataError("empty training split")
    stats = compute_stats(raw[:, train_lo:train_hi], mask[:, train_lo:train_hi], adjacency)
    z = normalize(raw, stats, mask)
    train_stride, eval_stride = config.strides()
    windows = {}
    for name, (lo, hi), stride in zip(("train", "val", "test"), bounds, (train_stride, eval_stride, eval_stride)):
        windows[name] = make_windows(
            z[:, lo:hi], mask[:, lo:hi], node_ids, timestamps[lo:hi], config.window_length, stride
        )
    return windows, adjacency, stats


def _smooth_field(coords: np.ndarray, rng: np.random.Generator, scale: float, n_waves: int = 4) -> np.ndarray:
    freqs = rng.normal(0.0, scale, size=(n_waves, 2))
    phase = rng.uniform(0, 2 * np.pi, size=n_waves)
    amp = rng.normal(0.0, 1.0, size=n_waves) / np.sqrt(n_waves)
    return np.cos(coords @ freqs.T * 2 * np.pi + phase) @ amp


def synthesize(spec: SyntheticSpec = SyntheticSpec(), config: DataConfig | None = None) -> SyntheticCorpus:
    """Low-rank smooth sensor field: sinusoidal temporal factors mixed by
    spatially smooth loadings of the node coordinates, plus white noise.

    ``corpus.windows`` holds raw (un-normalized) windows of length
    ``spec.window_length`` with stride L; callers that need splits and
    normalization go through :func:`prepare_windows`.
    """
    coord_rng = np.random.default_rng(spec.coord_seed)
    rng = np.random.default_rng(spec.seed)
    n, steps = spec.node_count, spec.n_steps
    coords = coord_rng.uniform(0.0, 1.0, size=(n, 2))

    periods = rng.uniform(spec.window_length / 2, 3 * spec.window_length, size=spec.n_factors)
    phases = rng.uniform(0, 2 * np.pi, size=spec.n_factors)
    t = np.arange(steps)
    factors = np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])  # F x S
    loadings = np.stack([1.0 + _smooth_field(coords, rng, spec.spatial_scale) for _ in range(spec.n_factors)], 1)
    level = 10.0 + 2.0 * _smooth_field(coords, rng, spec.spatial_scale)
    truth = level[:, None] + loadings @ factors
    noisy = truth + spec.noise_level * rng.standard_normal(truth.shape)
    mask = (rng.random(truth.shape) >= spec.missing_rate).astype(np.float64)
    values = np.where(mask > 0, noisy, 0.0)

    node_ids = tuple(f"s{i:03d}" for i in range(n))
    timestamps = np.datetime64("2020-01-01T00:00") + np.arange(steps) * np.timedelta64(spec.step_minutes, "m")
    cfg = config or DataConfig(window_length=spec.window_length)
    adjacency = build_adjacency(coords, cfg.kernel_width, cfg.threshold)
    windows = make_windows(values, mask, node_ids, timestamps, spec.window_length, spec.window_length)
    return SyntheticCorpus(values, mask, noisy, coords, node_ids, timestamps, adjacency, windows)
