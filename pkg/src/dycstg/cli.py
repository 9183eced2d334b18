"""Command-line entry point: simulate, preprocess, train, eval, ablate, grid.

Every command reads one flat JSON config (optional), applies ``--seed`` and
other flag overrides, and appends a run record holding the merged config to
``manifest.json`` in its output directory.

Exit codes: 0 ok, 2 configuration error, 3 data/file error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import subprocess
import sys
import time
from dataclasses import fields
from importlib import metadata
from pathlib import Path

from .data.csvio import load_csv, write_csv
from .data.layout import SensorLayout
from .data.preprocess import DataError
from .data.store import load_store, save_store, store_from_splits
from .experiments import (GRID_DEPTHS, ablate, layer_grid, run_once, tiled_test_split,
                          write_ablation_csv, write_grid_csv, write_history_csv)
from .graph import ConfigurationError
from .metrics import MetricsReport
from .model import ConfigError
from .pipeline import (PIPELINE_DEFAULTS, SIM_KEYS, get_layout, sim_config, simulate_dataset,
                       window_splits)
from .training import NumericAbort, TrainConfig, evaluate, load_checkpoint, save_checkpoint

log = logging.getLogger("dycstg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------- config

def load_config(path: str | None) -> dict:
    cfg = dict(PIPELINE_DEFAULTS)
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise CLIError(EXIT_CONFIG, f"config file {p} not found")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(EXIT_CONFIG, f"config {p}: invalid JSON ({exc})") from None
    if not isinstance(user, dict):
        raise CLIError(EXIT_CONFIG, f"config {p}: expected a flat JSON object")
    unknown = set(user) - set(PIPELINE_DEFAULTS) - _TRAIN_KEYS - SIM_KEYS
    if unknown:
        raise CLIError(EXIT_CONFIG, f"config {p}: unknown keys {sorted(unknown)}")
    cfg.update(user)
    return cfg


def validate_pipeline(cfg: dict) -> None:
    """Type and range checks for the non-model keys."""
    def bad(key, why):
        raise CLIError(EXIT_CONFIG, f"config key {key!r} {why}, got {cfg[key]!r}")

    for key in ("seed", "sg_window", "sg_order", "max_gap", "window", "stride"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool) or cfg[key] < 0:
            bad(key, "must be a non-negative integer")
    for key in ("duration_hours", "anomaly_ratio", "target_hz"):
        if not isinstance(cfg[key], (int, float)) or isinstance(cfg[key], bool):
            bad(key, "must be a number")
    if cfg["window"] < 1 or cfg["stride"] < 1:
        bad("window" if cfg["window"] < 1 else "stride", "must be positive")
    split = cfg["split"]
    if (not isinstance(split, list) or len(split) != 3
            or not all(isinstance(v, (int, float)) and v >= 0 for v in split)
            or abs(sum(split) - 1.0) > 1e-9):
        bad("split", "must be three non-negative fractions summing to 1")
    if not isinstance(cfg["anomaly_kinds"], list):
        bad("anomaly_kinds", "must be a list")


def train_config(cfg: dict) -> TrainConfig:
    kw = {k: v for k, v in cfg.items() if k in _TRAIN_KEYS}
    return TrainConfig(seed=int(cfg["seed"]), **kw)


# ----------------------------------------------------------------- manifest

def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def prepare_out(out: Path, force: bool) -> None:
    """Refuse a non-empty output directory unless forced; forcing clears it
    except for the manifest, which is append-only."""
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CLIError(EXIT_CONFIG, f"output directory {out} is not empty (use --force)")
        for child in out.iterdir():
            if child.name == "manifest.json":
                continue
            shutil.rmtree(child) if child.is_dir() else child.unlink()
    out.mkdir(parents=True, exist_ok=True)


def append_manifest(out: Path, record: dict) -> None:
    path = out / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {"runs": []}
    doc["runs"].append(record)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def report_dict(rep: MetricsReport) -> dict:
    return rep.to_dict()


# ----------------------------------------------------------------- commands

def cmd_simulate(args, cfg: dict, out: Path) -> dict:
    layout = get_layout(cfg)
    sc = sim_config(cfg)
    raw = simulate_dataset(cfg, layout)
    write_csv(out, raw)
    layout.save(out / "layout.json")
    write_json(out / "sim_config.json", {"seed": cfg["seed"], "duration_hours": cfg["duration_hours"],
                                         "anomaly_ratio": cfg["anomaly_ratio"],
                                         "anomaly_kinds": list(cfg["anomaly_kinds"]),
                                         "duration_s": raw.duration_s, "sim": sc.to_dict()})
    counts = layout.counts()
    summary = {"sensors": len(layout.sensors), "sensor_counts": counts,
               "anomaly_ratio": raw.anomaly_fraction(), "door_events": raw.transition_count(),
               "points": raw.n_points()}
    write_json(out / "summary.json", summary)
    print(f"sensors: {len(layout.sensors)} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    print(f"points: {summary['points']}  anomaly ratio: {summary['anomaly_ratio']:.4f}  "
          f"door events: {summary['door_events']}")
    return {"outputs": ["readings.csv", "events.csv", "layout.json", "sim_config.json", "summary.json"]}


def _dataset_dir(args) -> Path:
    if not args.data:
        raise CLIError(EXIT_CONFIG, "--data is required")
    d = Path(args.data)
    if not d.is_dir():
        raise CLIError(EXIT_DATA, f"data directory {d} not found")
    return d


def cmd_preprocess(args, cfg: dict, out: Path) -> dict:
    src = _dataset_dir(args)
    layout = SensorLayout.load(src / "layout.json") if (src / "layout.json").exists() else get_layout(cfg)
    duration = None
    if (src / "sim_config.json").exists():
        duration = json.loads((src / "sim_config.json").read_text()).get("duration_s")
    raw = load_csv(src, layout, duration)
    steps, (tr, va, te) = window_splits(raw, layout, cfg)
    store = store_from_splits(tr, va, te, int(cfg["stride"]), layout.sensor_ids)
    save_store(out, store)
    counts = store.counts()
    n_windows = len(tr) + len(va) + len(te)
    write_json(out / "summary.json", {"steps": steps, "windows": n_windows, **counts})
    print(f"steps: {steps}  windows: {n_windows}  "
          + " ".join(f"{k}={v}" for k, v in counts.items()))
    return {"outputs": ["windows.npz", "graph.json", "summary.json"]}


def _load_splits(args):
    d = _dataset_dir(args)
    return load_store(d).splits()


def _print_report(tag: str, rep: MetricsReport) -> None:
    auc = "n/a" if rep.auc is None else f"{rep.auc:.4f}"
    print(f"{tag}: precision={rep.precision:.4f} recall={rep.recall:.4f} f1={rep.f1:.4f} "
          f"auc={auc} threshold={rep.threshold:.6f}")


def cmd_train(args, cfg: dict, out: Path) -> dict:
    from .plotting import plot_history

    splits = _load_splits(args)
    tc = train_config(cfg)
    outcome = run_once("full", splits, tc, progress=_progress(args))
    save_checkpoint(out / "checkpoint.npz", outcome.result)
    write_history_csv(out / "history.csv", outcome.result.history)
    write_json(out / "metrics.json", {"test": report_dict(outcome.test), "threshold": outcome.result.threshold,
                                      "best_epoch": outcome.result.best_epoch})
    plot_history(outcome.result.history, out / "history.png")
    _print_report("test", outcome.test)
    return {"outputs": ["checkpoint.npz", "history.csv", "metrics.json", "history.png"]}


def cmd_eval(args, cfg: dict, out: Path) -> dict:
    if not args.checkpoint:
        raise CLIError(EXIT_CONFIG, "--checkpoint is required")
    ck = Path(args.checkpoint)
    if not ck.exists():
        raise CLIError(EXIT_DATA, f"checkpoint {ck} not found")
    params, zeta, _ = load_checkpoint(ck)
    _, _, te = _load_splits(args)
    rep = evaluate(params, tiled_test_split(te), zeta)
    write_json(out / "metrics.json", {"test": report_dict(rep)})
    _print_report("test", rep)
    return {"outputs": ["metrics.json"], "checkpoint": str(ck)}


def cmd_ablate(args, cfg: dict, out: Path) -> dict:
    from .plotting import plot_ablation

    splits = _load_splits(args)
    cb = _progress(args)
    outcomes = ablate(splits, train_config(cfg), progress=(lambda n, r: cb(r)) if cb else None)
    write_ablation_csv(out / "ablation.csv", outcomes)
    write_json(out / "ablation.json", {o.name: report_dict(o.test) for o in outcomes})
    plot_ablation([(o.name, o.test.f1, o.test.auc) for o in outcomes], out / "ablation.png")
    for o in outcomes:
        _print_report(o.name, o.test)
    return {"outputs": ["ablation.csv", "ablation.json", "ablation.png"]}


def cmd_grid(args, cfg: dict, out: Path) -> dict:
    from .plotting import plot_grid

    splits = _load_splits(args)
    cb = _progress(args)
    grid = layer_grid(splits, train_config(cfg), GRID_DEPTHS, progress=(lambda k, r: cb(r)) if cb else None)
    write_grid_csv(out / "grid.csv", grid)
    plot_grid(grid, GRID_DEPTHS, out / "grid.png")
    for g, row in zip(GRID_DEPTHS, grid):
        print(f"g_layers={g}: " + " ".join(f"{v:.4f}" for v in row))
    return {"outputs": ["grid.csv", "grid.png"]}


def _progress(args):
    if args.quiet:
        return None
    return lambda row: print(f"  epoch {row['epoch']:3d} loss {row['train_loss']:.5f} "
                             f"val_f1 {row['val_f1']:.4f}", flush=True)


COMMANDS = {"simulate": cmd_simulate, "preprocess": cmd_preprocess, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate, "grid": cmd_grid}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dycstg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (value parsed as JSON when possible)")
        p.add_argument("--quiet", action="store_true")
        if name != "simulate":
            p.add_argument("--data", help="dataset directory (preprocess) or window store (others)")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint.npz written by train")
    return parser


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for item in args.set:
        if "=" not in item:
            raise CLIError(EXIT_CONFIG, f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        if k not in PIPELINE_DEFAULTS and k not in _TRAIN_KEYS and k not in SIM_KEYS:
            raise CLIError(EXIT_CONFIG, f"unknown config key {k!r}")
        try:
            cfg[k] = json.loads(v)
        except json.JSONDecodeError:
            cfg[k] = v
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    started = time.time()
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        validate_pipeline(cfg)
        if args.command in ("train", "ablate", "grid"):
            train_config(cfg)   # validate before touching the output directory
        out = Path(args.out)
        prepare_out(out, args.force)
        info = COMMANDS[args.command](args, cfg, out)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ConfigurationError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    append_manifest(out, {
        "command": args.command, "config_path": args.config, "seed": cfg["seed"],
        "input": getattr(args, "data", None), "output": str(out), "version": version_string(),
        "config": cfg, "started": started, "finished": time.time(), **info,
    })
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
