"""Config-driven dataset construction shared by the CLI and the benchmark."""
from __future__ import annotations

import json
from pathlib import Path

from .data.anomalies import ANOMALY_KINDS, inject_anomalies
from .data.layout import SensorLayout, default_layout
from .data.preprocess import (DataError, DoorAdjacency, WindowSet, align, build_features,
                              chronological_split, make_windows)
from .data.simulate import RawSeries, SimConfig, simulate

PIPELINE_DEFAULTS = {
    "seed": 42,
    "duration_hours": 168.0,
    "anomaly_ratio": 0.15,
    "anomaly_kinds": list(ANOMALY_KINDS),
    "layout": None,            # path to a layout JSON; default 31-sensor house when null
    "target_hz": 0.5,
    "sg_window": 11,
    "sg_order": 3,
    "max_gap": 2,
    "window": 150,
    "stride": 15,
    "split": [0.70, 0.15, 0.15],
    "purge": False,
}
SIM_KEYS = set(SimConfig.__dataclass_fields__)

BENCHMARK_CONFIG = Path(__file__).resolve().parent / "configs" / "benchmark.json"


def load_benchmark_config() -> dict:
    """The desk-scale benchmark settings shipped with the package."""
    return {**PIPELINE_DEFAULTS, **json.loads(BENCHMARK_CONFIG.read_text())}


def get_layout(cfg: dict) -> SensorLayout:
    return SensorLayout.load(cfg["layout"]) if cfg.get("layout") else default_layout()


def sim_config(cfg: dict) -> SimConfig:
    return SimConfig.from_dict({k: v for k, v in cfg.items() if k in SIM_KEYS})


def simulate_dataset(cfg: dict, layout: SensorLayout | None = None) -> RawSeries:
    """Clean simulation at ``seed`` with anomalies injected at ``seed + 1``."""
    layout = layout or get_layout(cfg)
    raw = simulate(layout, int(cfg["seed"]), float(cfg["duration_hours"]), sim_config(cfg))
    raw, _ = inject_anomalies(raw, int(cfg["seed"]) + 1, float(cfg["anomaly_ratio"]),
                              tuple(cfg["anomaly_kinds"]))
    return raw


def window_splits(raw: RawSeries, layout: SensorLayout, cfg: dict
                  ) -> tuple[int, tuple[WindowSet, WindowSet, WindowSet]]:
    """Align, featurise, window and split; returns the step count and the splits."""
    aligned = align(raw, layout, cfg["target_hz"], cfg["sg_window"], cfg["sg_order"],
                    max_gap=int(cfg["max_gap"]))
    T, stride = int(cfg["window"]), int(cfg["stride"])
    if len(aligned) < T:
        raise DataError(f"aligned series has {len(aligned)} steps, shorter than the window T={T}")
    feats = build_features(aligned)
    base, bindings = layout.base_graph()
    adj = DoorAdjacency.from_aligned(aligned, base, bindings)
    windows = make_windows(feats, aligned.labels, adj, T, stride, aligned.t)
    return len(aligned), chronological_split(windows, tuple(cfg["split"]), purge=bool(cfg["purge"]))
