"""Command-line entry point.

Subcommands share one INI config file. A ``profile`` key in ``[run]`` picks
dataset defaults (aqi36, metr-la, pems-bay, synth); any key set in the file or
on the command line overrides them. Every command writes only inside
``--out`` and echoes the effective config there as ``config.ini``, with data
paths made absolute so the echo can be rerun from anywhere.

Exit codes: 0 ok, 2 bad config, 3 missing file, 4 divergence, 5 checkpoint
mismatch, 6 empty evaluation mask, 7 bad data.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataConfig, DataError, SyntheticSpec, load_series, write_coords, write_series, synthesize
from .diffusion import build_schedule
from .engine import CheckpointError, DivergenceError, TrainConfig, impute_dataset, load_checkpoint, save_checkpoint, train
from .masking import MaskError, StrategyConfig, simulate_eval_plans
from .metrics import EmptyMaskError, write_report
from .model import ModelConfig

log = logging.getLogger("stimpute")

PROFILES = {
    "aqi36": {
        "data": {"window_length": "36"},
        "model": {"virtual_nodes": "16", "steps": "100"},
        "train": {"epochs": "200", "hybrid_alternative": "historical"},
        "run": {"pattern": "point"},
    },
    "metr-la": {
        "data": {"window_length": "24"},
        "model": {"virtual_nodes": "64", "steps": "50"},
        "train": {"epochs": "300", "hybrid_alternative": "block"},
        "run": {"pattern": "block"},
    },
    "pems-bay": {
        "data": {"window_length": "24"},
        "model": {"virtual_nodes": "64", "steps": "50"},
        "train": {"epochs": "300", "hybrid_alternative": "block"},
        "run": {"pattern": "block"},
    },
    "synth": {
        "data": {"window_length": "24"},
        "model": {"virtual_nodes": "16", "steps": "50"},
        "train": {"epochs": "30", "hybrid_alternative": "block"},
        "run": {"pattern": "block"},
    },
}

BASE = {
    "run": {"profile": "synth", "seed": "0", "pattern": "block", "samples": "100", "plot_nodes": "5", "plot_windows": "1", "save_samples": "no"},
    "data": {"series": "", "coords": "", "truth": "", "window_length": "24", "split": "0.7,0.1,0.2", "kernel_width": "", "threshold": "0.1"},
    "model": {"channels": "64", "heads": "8", "layers": "4", "virtual_nodes": "16", "steps": "50", "beta_min": "0.0001", "beta_max": "0.2"},
    "train": {"epochs": "30", "batch_size": "16", "lr": "0.001", "strategy": "hybrid", "hybrid_alternative": "block", "checkpoint": ""},
    "synth": {"node_count": "20", "n_steps": "2400", "n_factors": "3", "noise_level": "0.1", "missing_rate": "0.0", "spatial_scale": "2.0", "step_minutes": "5", "coord_seed": "0"},
}

PATH_KEYS = (("data", "series"), ("data", "coords"), ("data", "truth"), ("train", "checkpoint"))


class ConfigError(ValueError):
    pass


class MissingFileError(FileNotFoundError):
    pass


def load_config(path: str | None, overrides: dict) -> configparser.ConfigParser:
    user = configparser.ConfigParser()
    base_dir = Path.cwd()
    if path:
        p = Path(path)
        if not p.is_file():
            raise MissingFileError(f"config file not found: {path}")
        try:
            user.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base_dir = p.resolve().parent
    profile = overrides.get(("run", "profile")) or user.get("run", "profile", fallback=BASE["run"]["profile"])
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    cfg = configparser.ConfigParser()
    cfg.read_dict(BASE)
    cfg.read_dict(PROFILES[profile])
    for section in user.sections():
        if section not in BASE:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in user.items(section):
            if key not in BASE[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cfg.set(section, key, value)
    cfg.set("run", "profile", profile)
    for (section, key), value in overrides.items():
        if value is not None:
            cfg.set(section, key, str(value))
    for section, key in PATH_KEYS:
        value = cfg.get(section, key)
        if value and not Path(value).is_absolute():
            cfg.set(section, key, str((base_dir / value).resolve()))
    return cfg


def _get(cfg, section, key, kind=str, lo=None, hi=None):
    raw = cfg.get(section, key)
    try:
        value = kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc
    if lo is not None and value < lo or hi is not None and value > hi:
        raise ConfigError(f"[{section}] {key} = {value} outside [{lo}, {hi}]")
    return value


def _bool(cfg, section, key):
    try:
        return cfg.getboolean(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} must be yes/no") from exc


def _require(cfg, *keys):
    for section, key in keys:
        value = cfg.get(section, key)
        if not value:
            raise ConfigError(f"[{section}] {key} is required for this command")
        if not Path(value).is_file():
            raise MissingFileError(f"[{section}] {key}: file not found: {value}")


def data_config(cfg) -> DataConfig:
    try:
        split = tuple(float(s) for s in cfg.get("data", "split").split(","))
    except ValueError as exc:
        raise ConfigError("[data] split must be three comma-separated numbers") from exc
    if len(split) != 3 or min(split) < 0 or split[0] <= 0:
        raise ConfigError("[data] split must be three nonnegative numbers with a positive training share")
    width = cfg.get("data", "kernel_width")
    return DataConfig(
        window_length=_get(cfg, "data", "window_length", int, 1),
        split=split,
        kernel_width=_get(cfg, "data", "kernel_width", float, 0.0) if width else None,
        threshold=_get(cfg, "data", "threshold", float, 0.0, 1.0),
    )


def model_config(cfg, n_nodes: int) -> ModelConfig:
    virtual = cfg.get("model", "virtual_nodes").strip().lower()
    try:
        return ModelConfig(
            n_nodes=n_nodes,
            channels=_get(cfg, "model", "channels", int, 1),
            heads=_get(cfg, "model", "heads", int, 1),
            layers=_get(cfg, "model", "layers", int, 1),
            virtual_nodes=None if virtual in ("", "none", "full") else _get(cfg, "model", "virtual_nodes", int, 1),
            num_steps=_get(cfg, "model", "steps", int, 2),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg) -> TrainConfig:
    try:
        strategy = StrategyConfig(kind=cfg.get("train", "strategy"), hybrid_alternative=cfg.get("train", "hybrid_alternative"))
    except MaskError as exc:
        raise ConfigError(str(exc)) from exc
    return TrainConfig(
        batch_size=_get(cfg, "train", "batch_size", int, 1),
        epochs=_get(cfg, "train", "epochs", int, 0),
        lr=_get(cfg, "train", "lr", float, 1e-12),
        strategy=strategy,
        seed=_get(cfg, "run", "seed", int, 0),
    )


def schedule(cfg):
    try:
        return build_schedule(
            _get(cfg, "model", "steps", int, 2), _get(cfg, "model", "beta_min", float), _get(cfg, "model", "beta_max", float)
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def echo_config(cfg, out: Path) -> None:
    with open(out / "config.ini", "w") as fh:
        cfg.write(fh)


def cmd_synth(cfg, out: Path) -> int:
    g = lambda key, kind=float: _get(cfg, "synth", key, kind)
    spec = SyntheticSpec(
        node_count=g("node_count", int),
        window_length=_get(cfg, "data", "window_length", int, 1),
        n_steps=g("n_steps", int),
        n_factors=g("n_factors", int),
        noise_level=g("noise_level"),
        missing_rate=g("missing_rate"),
        spatial_scale=g("spatial_scale"),
        step_minutes=g("step_minutes", int),
        coord_seed=g("coord_seed", int),
        seed=_get(cfg, "run", "seed", int, 0),
    )
    corpus = synthesize(spec, data_config(cfg))
    write_series(out / "series.csv", corpus.values, corpus.observed_mask, corpus.node_ids, corpus.timestamps)
    write_series(out / "truth.csv", corpus.truth, np.ones_like(corpus.truth), corpus.node_ids, corpus.timestamps)
    write_coords(out / "coords.csv", corpus.node_ids, corpus.coords)
    corpus.adjacency.save(out / "adjacency.txt")
    for key, name in (("series", "series.csv"), ("coords", "coords.csv"), ("truth", "truth.csv")):
        cfg.set("data", key, str((out / name).resolve()))
    echo_config(cfg, out)
    log.info("wrote %d nodes x %d steps to %s", spec.node_count, spec.n_steps, out)
    return 0


def _load(cfg):
    _require(cfg, ("data", "series"), ("data", "coords"))
    return load_series(cfg.get("data", "series"), cfg.get("data", "coords"), data_config(cfg))


def cmd_train(cfg, out: Path) -> int:
    windows, adjacency, stats = _load(cfg)
    model_cfg = model_config(cfg, adjacency.n_nodes)
    train_cfg = train_config(cfg)
    sched = schedule(cfg)
    result = train(windows["train"], adjacency, model_cfg, train_cfg, sched, val_windows=windows["val"] or None)
    ckpt = out / "model.safetensors"
    save_checkpoint(ckpt, result.model, sched, stats, {"seed": train_cfg.seed, "epochs": train_cfg.epochs})
    with open(out / "loss_trace.txt", "w") as fh:
        for epoch, (loss, lr) in enumerate(zip(result.losses, result.lrs), start=1):
            fh.write(f"{epoch} {loss!r} {lr!r}\n")
    cfg.set("train", "checkpoint", str(ckpt.resolve()))
    echo_config(cfg, out)
    return 0


def _eval_setup(cfg):
    _require(cfg, ("train", "checkpoint"))
    windows, adjacency, stats = _load(cfg)
    model, sched, ckpt_stats, _ = load_checkpoint(cfg.get("train", "checkpoint"))
    if model.cfg.n_nodes != adjacency.n_nodes:
        raise CheckpointError(f"checkpoint expects {model.cfg.n_nodes} nodes, data has {adjacency.n_nodes}")
    test = windows["test"]
    if not test:
        raise DataError("test split holds no complete window")
    stats = ckpt_stats or stats
    seed = _get(cfg, "run", "seed", int, 0)
    plans = simulate_eval_plans(test, cfg.get("run", "pattern"), np.random.default_rng([seed, 1]))
    return test, adjacency, model, sched, stats, plans, seed


def _run_imputation(cfg):
    test, adjacency, model, sched, stats, plans, seed = _eval_setup(cfg)
    samples = _get(cfg, "run", "samples", int, 1)
    report = impute_dataset(test, adjacency, model, plans, stats, sched, samples, seed=seed)
    return test, plans, report


def _truth_windows(cfg, test):
    path = cfg.get("data", "truth")
    if not path or not Path(path).is_file():
        return None
    from .data import read_series

    ids, stamps, values, _ = read_series(path)
    index = {ts: j for j, ts in enumerate(stamps)}
    out = []
    for w in test:
        cols = [index.get(ts) for ts in w.timestamps]
        if None in cols or tuple(ids) != tuple(w.node_ids):
            return None
        out.append(values[:, cols])
    return out


def cmd_impute(cfg, out: Path) -> int:
    from .plots import plot_node

    test, plans, report = _run_imputation(cfg)
    truth = _truth_windows(cfg, test)
    plot_dir = out / "plots"
    plot_dir.mkdir(exist_ok=True)
    n_plot_nodes = _get(cfg, "run", "plot_nodes", int, 0)
    n_plot_windows = _get(cfg, "run", "plot_windows", int, 0)
    keep = _bool(cfg, "run", "save_samples")
    for i, (w, plan, res, ref) in enumerate(zip(test, plans, report.results, report.truth)):
        stem = f"window_{i:04d}"
        for name, arr in (("median", res.median), ("q05", res.q05), ("q95", res.q95)):
            write_series(out / f"{stem}_{name}.csv", arr, np.ones_like(arr), w.node_ids, w.timestamps)
        plan.save(out / stem)
        if keep:
            np.save(out / f"{stem}_samples.npy", res.samples)
        if i < n_plot_windows:
            for node in range(min(n_plot_nodes, w.n_nodes)):
                plot_node(
                    plot_dir / f"{stem}_{w.node_ids[node]}.svg",
                    w.timestamps,
                    res,
                    node,
                    ref,
                    plan.cond_mask,
                    truth[i] if truth is not None else None,
                    title=f"{w.node_ids[node]} from {w.timestamps[0]}",
                )
    echo_config(cfg, out)
    log.info("imputed %d windows into %s", len(test), out)
    return 0


def cmd_evaluate(cfg, out: Path) -> int:
    _, _, report = _run_imputation(cfg)
    if not report.metrics["target_cells"]:
        raise EmptyMaskError("empty evaluation mask")
    write_report(report.metrics, out / "metrics.txt", out / "metrics.kv")
    echo_config(cfg, out)
    print(open(out / "metrics.txt").read(), end="")
    return 0


def cmd_simulate_mask(cfg, out: Path) -> int:
    windows, _, _ = _load(cfg)
    test = windows["test"]
    if not test:
        raise DataError("test split holds no complete window")
    seed = _get(cfg, "run", "seed", int, 0)
    plans = simulate_eval_plans(test, cfg.get("run", "pattern"), np.random.default_rng([seed, 1]))
    for i, plan in enumerate(plans):
        plan.save(out / f"window_{i:04d}")
    echo_config(cfg, out)
    log.info("wrote %d mask pairs (%d target cells)", len(plans), int(sum(p.target_mask.sum() for p in plans)))
    return 0


COMMANDS = {
    "train": cmd_train,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "simulate-mask": cmd_simulate_mask,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stimpute", description="Diffusion-based spatiotemporal imputation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--pattern", help="point | block | failure:<id>[,<id>...]")
        p.add_argument("--samples", type=int, help="imputation samples per window (default 100)")
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


EXIT_CODES = (
    (ConfigError, 2),
    (MissingFileError, 3),
    (DivergenceError, 4),
    (CheckpointError, 5),
    (EmptyMaskError, 6),
    (MaskError, 2),
    (DataError, 7),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {
        ("run", "seed"): args.seed,
        ("run", "pattern"): args.pattern,
        ("run", "samples"): args.samples,
        ("run", "profile"): args.profile,
    }
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        if args.samples is not None and args.samples < 1:
            raise ConfigError("--samples must be >= 1")
        cfg = load_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except tuple(cls for cls, _ in EXIT_CODES) as exc:
        code = next(c for cls, c in EXIT_CODES if isinstance(exc, cls))
        print(f"stimpute {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
