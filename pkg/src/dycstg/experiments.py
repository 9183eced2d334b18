"""Matched-seed experiment runners: single run, component ablation, layer grid."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.preprocess import WindowSet
from .metrics import MetricsReport
from .model import ConfigError
from .training import TrainConfig, TrainResult, evaluate, train

ABLATIONS = (
    ("full", {}),
    ("no_dynamic_graph", {"use_dynamic_graph": False}),
    ("no_gat", {"use_gat": False}),
    ("no_encoder", {"use_encoder": False}),
    ("no_causal", {"use_causal": False}),
)
GRID_DEPTHS = (1, 2, 3)


@dataclass
class RunOutcome:
    name: str
    config: TrainConfig
    result: TrainResult
    test: MetricsReport


def tiled_test_split(test: WindowSet) -> WindowSet:
    """Non-overlapping tiling of the test split so each point is scored once."""
    return test.tiled()


def run_once(name: str, splits: tuple[WindowSet, WindowSet, WindowSet], cfg: TrainConfig,
             progress=None) -> RunOutcome:
    tr, va, te = splits
    res = train(tr, va, cfg, progress=progress)
    rep = evaluate(res.params, tiled_test_split(te), res.threshold)
    return RunOutcome(name, cfg, res, rep)


def ablate(splits, base: TrainConfig, progress=None) -> list[RunOutcome]:
    """Full model plus the four single-component removals, same seed."""
    flags = ("use_dynamic_graph", "use_gat", "use_encoder", "use_causal")
    if not any(getattr(base, f) for f in flags):
        raise ConfigError("every model component is disabled")
    base = base.replace(**{f: True for f in flags})
    out = []
    for name, override in ABLATIONS:
        cb = (lambda row, n=name: progress(n, row)) if progress else None
        out.append(run_once(name, splits, base.replace(**override), cb))
    return out


def layer_grid(splits, base: TrainConfig, depths=GRID_DEPTHS, progress=None) -> np.ndarray:
    """Test F1 for every (graph layers, temporal layers) pair; rows index G_l."""
    grid = np.zeros((len(depths), len(depths)))
    for i, g in enumerate(depths):
        for j, t in enumerate(depths):
            cb = (lambda row, key=(g, t): progress(key, row)) if progress else None
            grid[i, j] = run_once(f"g{g}_t{t}", splits, base.replace(g_layers=g, t_layers=t), cb).test.f1
    return grid


REPORT_FIELDS = ("precision", "recall", "f1", "auc", "threshold", "tp", "fp", "tn", "fn")


def write_ablation_csv(path, outcomes: list[RunOutcome]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant",) + REPORT_FIELDS)
        for o in outcomes:
            d = o.test.to_dict()
            w.writerow([o.name] + [_fmt(d[k]) for k in REPORT_FIELDS])


def write_grid_csv(path, grid: np.ndarray, depths=GRID_DEPTHS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["g_layers"] + [f"t_layers={t}" for t in depths])
        for g, row in zip(depths, grid):
            w.writerow([g] + [_fmt(v) for v in row])


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])


def write_history_csv(path, history: list[dict]) -> None:
    if not history:
        Path(path).write_text("")
        return
    keys = list(history[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in history:
            w.writerow([_fmt(row[k]) for k in keys])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
