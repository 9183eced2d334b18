"""Smoothing, alignment to a common 0.5 Hz grid, feature engineering,
sliding windows and chronological splitting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.signal import savgol_filter

from ..graph import (BaseGraph, ControlBinding, DynamicAdjacencySequence, build_adjacency_sequence,
                     neighbor_masks, NODE_KINDS)
from .layout import SensorLayout
from .simulate import RawSeries

ROLL = 5
BASELINE_ROLL = 900   # 30 minutes at 0.5 Hz
N_FEATURES = 5 + len(NODE_KINDS)   # value, diff, mean(5), std(5), z - mean(30), one-hot(4)


class DataError(ValueError):
    """Input data cannot be processed (too short, gaps, unsorted...)."""


class GapError(DataError):
    def __init__(self, sensor_id: str, bin_index: int, n_missing: int):
        super().__init__(f"sensor {sensor_id}: {n_missing} empty bins starting at bin {bin_index}")
        self.sensor_id = sensor_id
        self.bin_index = bin_index


def smooth_savitzky_golay(values: np.ndarray, window_len: int = 11, polyorder: int = 3) -> np.ndarray:
    """Least-squares polynomial smoothing with mirrored edges."""
    if window_len % 2 == 0:
        raise ValueError(f"window_len must be odd, got {window_len}")
    if window_len <= polyorder:
        raise ValueError("window_len must exceed polyorder")
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window_len:
        raise DataError(f"series of length {len(values)} shorter than window {window_len}")
    return savgol_filter(values, window_len, polyorder, mode="mirror")


@dataclass
class Downsampled:
    values: np.ndarray
    flag: np.ndarray
    anomaly_kind: np.ndarray


def downsample(t: np.ndarray, values: np.ndarray, n_bins: int, target_hz: float = 0.5,
               state: bool = False, flag: np.ndarray | None = None,
               anomaly_kind: np.ndarray | None = None, max_gap: int = 2,
               sensor_id: str = "?") -> Downsampled:
    """Aggregate samples into bins of width ``1 / target_hz`` seconds.

    Continuous sensors take the bin mean; state sensors (``state=True``) take
    the last observation in the bin. Runs of up to ``max_gap`` empty bins are
    filled by carrying the previous bin forward; longer runs raise
    :class:`GapError`. A bin is flagged when at least half of its samples are.
    """
    width = 1.0 / target_hz
    t = np.asarray(t, dtype=np.float64)
    if len(t) > 1 and np.min(np.diff(t)) < 0:
        raise DataError(f"sensor {sensor_id}: timestamps are not sorted")
    if len(t) > 1 and 1.0 / np.median(np.diff(t)) < target_hz:
        raise DataError(f"sensor {sensor_id}: native rate below target {target_hz} Hz")
    b = np.floor(t / width + 1e-9).astype(np.int64)
    keep = (b >= 0) & (b < n_bins)
    b, v = b[keep], np.asarray(values, dtype=np.float64)[keep]
    counts = np.bincount(b, minlength=n_bins)
    if state:
        out = np.full(n_bins, np.nan)
        out[b] = v   # later samples overwrite earlier ones: last observation wins
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.bincount(b, weights=v, minlength=n_bins) / counts
    empty = counts == 0
    if empty.any():
        idx = np.flatnonzero(empty)
        run_start = idx[np.r_[True, np.diff(idx) > 1]]
        run_end = idx[np.r_[np.diff(idx) > 1, True]]
        for s, e in zip(run_start, run_end):
            if e - s + 1 > max_gap or s == 0:
                raise GapError(sensor_id, int(s), int(e - s + 1))
            out[s:e + 1] = out[s - 1]
    f = np.zeros(n_bins, dtype=bool)
    k = np.zeros(n_bins, dtype=np.uint8)
    if flag is not None:
        fl = np.asarray(flag)[keep]
        nflag = np.bincount(b, weights=fl.astype(np.float64), minlength=n_bins)
        f = (counts > 0) & (2 * nflag >= counts) & (nflag > 0)
        if anomaly_kind is not None:
            np.maximum.at(k, b, np.asarray(anomaly_kind)[keep].astype(np.uint8))
            k[~f] = 0
    return Downsampled(out, f, k)


@dataclass
class AlignedSeries:
    """All sensors on one grid: arrays are ``(L, N)``."""

    t: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    anomaly_kind: np.ndarray
    sensor_ids: list[str]
    kinds: list[str]

    def __len__(self) -> int:
        return len(self.t)

    @property
    def labels(self) -> np.ndarray:
        """Credibility labels, 1 = trustworthy."""
        return (~self.flags).astype(np.int8)

    def column(self, sensor_id: str) -> np.ndarray:
        return self.values[:, self.sensor_ids.index(sensor_id)]


def align(raw: RawSeries, layout: SensorLayout, target_hz: float = 0.5, sg_window: int = 11,
          sg_order: int = 3, smooth: bool = True, max_gap: int = 2) -> AlignedSeries:
    """Smooth continuous sensors at their native rate, then bin to ``target_hz``."""
    n_bins = int(np.floor(raw.duration_s * target_hz + 1e-9))
    cols, flags, kinds = [], [], []
    for s in layout.sensors:
        tr = raw.traces[s.id]
        is_state = s.kind == "door"
        v = tr.values if (is_state or not smooth) else smooth_savitzky_golay(tr.values, sg_window, sg_order)
        d = downsample(tr.t, v, n_bins, target_hz, state=is_state, flag=tr.flag,
                       anomaly_kind=tr.anomaly_kind, max_gap=max_gap, sensor_id=s.id)
        cols.append(d.values)
        flags.append(d.flag)
        kinds.append(d.anomaly_kind)
    return AlignedSeries(np.arange(n_bins) / target_hz, np.stack(cols, 1), np.stack(flags, 1),
                         np.stack(kinds, 1), layout.sensor_ids, [s.kind for s in layout.sensors])


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, fit_fraction: float = 0.7) -> "Normalizer":
        n = max(1, int(len(values) * fit_fraction))
        mu = values[:n].mean(axis=0)
        sd = values[:n].std(axis=0)
        return cls(mu, np.where(sd > 0, sd, 1.0))


def _trailing(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and population std over up to ``k`` steps (fewer at the start)."""
    c1 = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    c2 = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x * x]), axis=0)
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - k, 0)
    cnt = (idx - lo)[:, None]
    m = (c1[idx] - c1[lo]) / cnt
    var = np.maximum((c2[idx] - c2[lo]) / cnt - m * m, 0.0)
    return m, np.sqrt(var)


def build_features(aligned: AlignedSeries, normalizer: Normalizer | None = None) -> np.ndarray:
    """Per-step node features ``(L, N, 9)``:
    z-scored value, first difference, trailing mean(5), trailing std(5),
    deviation from the trailing 30-minute median, one-hot sensor kind
    (temperature, humidity, light, door)."""
    norm = normalizer or Normalizer.fit(aligned.values)
    z = (aligned.values - norm.mean) / norm.std
    diff = np.vstack([np.zeros((1, z.shape[1])), np.diff(z, axis=0)])
    rm, rs = _trailing(z, ROLL)
    baseline = pd.DataFrame(z).rolling(BASELINE_ROLL, min_periods=1).median().to_numpy()
    onehot = np.zeros((len(NODE_KINDS), z.shape[1]))
    for j, k in enumerate(aligned.kinds):
        onehot[NODE_KINDS.index(k), j] = 1.0
    L = len(z)
    return np.concatenate([np.stack([z, diff, rm, rs, z - baseline], axis=-1),
                           np.broadcast_to(onehot.T, (L,) + onehot.T.shape)], axis=-1)


# --------------------------------------------------------------------- windows

@dataclass
class WindowSample:
    x: np.ndarray                       # (T, N, D_in)
    adj_seq: DynamicAdjacencySequence   # T matrices
    y: np.ndarray                       # (T, N), 1 = trustworthy
    window_start: float


class DoorAdjacency:
    """Adjacency builder driven by aligned door states ``(L, n_controls)``."""

    def __init__(self, base: BaseGraph, bindings: Sequence[ControlBinding], door_states: np.ndarray):
        self.base = base
        self.bindings = list(bindings)
        self.door_states = np.asarray(door_states, dtype=np.float64)
        if self.door_states.shape[1] != len(self.bindings):
            raise DataError("one door-state column per binding is required")
        self._base_mask = neighbor_masks(DynamicAdjacencySequence(base.a_base[None]))[0]

    def __call__(self, start: int, T: int) -> DynamicAdjacencySequence:
        st = {b.control_node: self.door_states[start:start + T, k] for k, b in enumerate(self.bindings)}
        return build_adjacency_sequence(self.base, self.bindings, st, T)

    def masks(self, start: int, T: int, dynamic: bool = True) -> np.ndarray:
        if not dynamic:
            return np.broadcast_to(self._base_mask, (T,) + self._base_mask.shape)
        return neighbor_masks(self(start, T))

    @classmethod
    def from_aligned(cls, aligned: AlignedSeries, base: BaseGraph,
                     bindings: Sequence[ControlBinding]) -> "DoorAdjacency":
        cols = [aligned.values[:, b.control_node] for b in bindings]
        states = np.stack(cols, 1) if cols else np.zeros((len(aligned), 0))
        return cls(base, bindings, np.clip(np.round(states), 0, 1))


def window_count(L: int, T: int, stride: int) -> int:
    if L < T:
        return 0
    return (L - T) // stride + 1


class WindowSet(Sequence):
    """Lazily materialised sliding windows over shared arrays."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, timestamps: np.ndarray,
                 adj: Callable | DoorAdjacency, starts: np.ndarray, T: int):
        self.features = features
        self.labels = labels
        self.timestamps = timestamps
        self.adj = adj
        self.starts = np.asarray(starts, dtype=np.int64)
        self.T = T

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        s = int(self.starts[i])
        return WindowSample(self.features[s:s + self.T], self.adj(s, self.T),
                            self.labels[s:s + self.T], float(self.timestamps[s]))

    @property
    def window_starts(self) -> np.ndarray:
        return self.timestamps[self.starts]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.features, self.labels, self.timestamps, self.adj, self.starts[idx], self.T)

    def tiled(self) -> "WindowSet":
        """Greedy non-overlapping subset: each covered step appears once."""
        keep, nxt = [], -1
        for k, s in enumerate(self.starts):
            if s >= nxt:
                keep.append(k)
                nxt = s + self.T
        return self.subset(np.array(keep, dtype=np.int64))

    def covered_steps(self) -> tuple[int, int]:
        """Half-open step range spanned by the windows."""
        return int(self.starts.min()), int(self.starts.max()) + self.T

    def batch(self, idx, dynamic: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(x [B,T,N,D], masks [B,T,N,N], y [B,T,N])``."""
        xs, ms, ys = [], [], []
        for k in idx:
            s = int(self.starts[k])
            xs.append(self.features[s:s + self.T])
            ys.append(self.labels[s:s + self.T])
            if isinstance(self.adj, DoorAdjacency):
                ms.append(self.adj.masks(s, self.T, dynamic))
            else:
                ms.append(neighbor_masks(self.adj(s, self.T)))
        return np.stack(xs), np.stack(ms), np.stack(ys)


def make_windows(features: np.ndarray, labels: np.ndarray, adj_builder, T: int = 150,
                 stride: int = 15, timestamps: np.ndarray | None = None) -> WindowSet:
    """Sliding windows of length ``T`` every ``stride`` steps."""
    L = len(features)
    if L < T:
        raise DataError(f"series of {L} steps is shorter than the window T={T}")
    if stride < 1 or T < 1:
        raise ValueError("T and stride must be positive")
    ts = np.arange(L, dtype=np.float64) if timestamps is None else np.asarray(timestamps)
    starts = np.arange(window_count(L, T, stride)) * stride
    return WindowSet(features, labels, ts, adj_builder, starts, T)


def chronological_split(windows: WindowSet, ratios=(0.70, 0.15, 0.15),
                        purge: bool = False) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Contiguous train/val/test partition by window start.

    Sizes: ``floor(n * r_train)``, ``floor(n * r_val)``, remainder. With
    ``purge`` the leading windows of val and test that overlap the previous
    partition's covered steps are dropped.
    """
    starts = windows.window_starts
    if np.any(np.diff(starts) <= 0):
        raise ValueError("windows must be sorted by strictly increasing start time")
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n = len(windows)
    n_tr = int(np.floor(n * ratios[0] + 1e-9))
    n_va = int(np.floor(n * ratios[1] + 1e-9))
    idx = np.arange(n)
    parts = [idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:]]
    if purge:
        end = -1   # first step not yet covered by an earlier partition
        for p in (0, 1, 2):
            if p:
                parts[p] = parts[p][windows.starts[parts[p]] >= end]
            if len(parts[p]):
                end = max(end, int(windows.starts[parts[p]].max()) + windows.T)
    return tuple(windows.subset(p) for p in parts)
