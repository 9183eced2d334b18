"""Controlled corruption of raw series with exact ground-truth labels.

* spike: an additive impulse of 5-10 reference sigmas lasting one second
  (one sample at 1 Hz, two at 2 Hz), isolated from other anomalies.
* drift: an additive bias that ramps linearly over a contiguous 2-15 minute
  segment, from ``drift_start`` to ``drift_end`` reference sigmas.

The reference sigma of a sensor is the standard deviation of its clean
series. Door sensors are never corrupted; the per-sensor corruption rate is
raised so the overall fraction across all raw points matches ``ratio``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import ConfigurationError
from .simulate import KIND_CODES, RawSeries, SensorTrace

ANOMALY_KINDS = ("drift", "spike")


@dataclass
class AnomalyLabel:
    flags: dict[str, np.ndarray]
    kinds: dict[str, np.ndarray]

    def fraction(self) -> float:
        n = sum(len(f) for f in self.flags.values())
        return sum(int(f.sum()) for f in self.flags.values()) / n if n else 0.0


@dataclass
class AnomalyConfig:
    spike_share: float = 0.03          # fraction of corrupted points that are spikes
    spike_sigma: tuple[float, float] = (5.0, 10.0)
    drift_minutes: tuple[float, float] = (2.0, 15.0)
    drift_start: tuple[float, float] = (1.0, 2.0)
    drift_end: tuple[float, float] = (2.0, 4.0)
    spike_guard_s: float = 10.0        # clean margin around each spike


def labels_of(series: RawSeries) -> AnomalyLabel:
    return AnomalyLabel({k: tr.flag.copy() for k, tr in series.traces.items()},
                        {k: tr.anomaly_kind.copy() for k, tr in series.traces.items()})


def add_spike(trace: SensorTrace, index: int, amplitude: float) -> None:
    """Add ``amplitude`` to the one-second block of samples starting at ``index``."""
    width = max(1, int(round(1.0 / float(trace.t[1] - trace.t[0])))) if len(trace.t) > 1 else 1
    sl = slice(index, min(index + width, len(trace.t)))
    trace.values[sl] += amplitude
    trace.flag[sl] = True
    trace.anomaly_kind[sl] = KIND_CODES["spike"]


def add_drift(trace: SensorTrace, start: int, length: int, b0: float, b1: float) -> None:
    """Add a bias ramping linearly from ``b0`` to ``b1`` over ``length`` samples."""
    ramp = np.linspace(b0, b1, length)
    trace.values[start:start + length] += ramp
    trace.flag[start:start + length] = True
    trace.anomaly_kind[start:start + length] = KIND_CODES["drift"]


def _drift_lengths(rng, budget: int, lo: int, hi: int) -> list[int]:
    out = []
    remaining = budget
    while remaining > 0:
        if remaining <= hi:
            if remaining >= lo or not out:
                out.append(remaining)
            else:
                # too short to stand alone: fold into earlier segments, capped at hi
                for i in range(len(out)):
                    take = min(remaining, hi - out[i])
                    out[i] += take
                    remaining -= take
                    if remaining == 0:
                        break
                if remaining:
                    out.append(remaining)
            break
        d = int(rng.integers(lo, hi + 1))
        d = min(d, remaining - lo) if remaining - d < lo else d
        out.append(d)
        remaining -= d
    return out


def _place_segments(rng, n: int, lengths: list[int]) -> list[int]:
    """Random non-overlapping starts for segments of the given lengths (in order)."""
    free = n - sum(lengths)
    if free < 0:
        raise ConfigurationError("anomaly budget exceeds series length")
    order = rng.permutation(len(lengths))
    cuts = np.sort(rng.integers(0, free + 1, size=len(lengths)))
    starts, used = [0] * len(lengths), 0
    for slot, seg in enumerate(order):
        starts[seg] = int(cuts[slot]) + used
        used += lengths[seg]
    return starts


def inject_anomalies(series: RawSeries, seed: int, ratio: float,
                     kinds=ANOMALY_KINDS, config: AnomalyConfig | None = None) -> tuple[RawSeries, AnomalyLabel]:
    """Return a corrupted copy of ``series`` and its per-sample labels."""
    cfg = config or AnomalyConfig()
    kinds = tuple(kinds)
    unknown = set(kinds) - set(ANOMALY_KINDS)
    if unknown:
        raise ConfigurationError(f"unknown anomaly kinds {sorted(unknown)}")
    if not 0.0 <= ratio < 0.5:
        raise ConfigurationError(f"anomaly ratio must lie in [0, 0.5), got {ratio}")
    out = series.copy()
    if ratio == 0.0 or not kinds:
        return out, labels_of(out)

    rng = np.random.default_rng(seed)
    eligible = [tr for tr in out.traces.values() if tr.kind != "door"]
    n_all = out.n_points()
    n_elig = sum(len(tr.t) for tr in eligible)
    rate = ratio * n_all / n_elig
    if rate >= 0.5:
        raise ConfigurationError("too few eligible sensors to reach the requested ratio")
    spike_share = cfg.spike_share if "spike" in kinds else 0.0
    if "drift" not in kinds:
        spike_share = 1.0

    for tr in eligible:
        n = len(tr.t)
        hz = int(round(1.0 / float(tr.t[1] - tr.t[0])))
        sigma = float(np.std(tr.values)) or 1.0
        budget = int(round(rate * n))
        n_spikes = int(round(spike_share * budget / hz))
        drift_budget = budget - n_spikes * hz
        if drift_budget > 0:
            lo = int(cfg.drift_minutes[0] * 60 * hz)
            hi = int(cfg.drift_minutes[1] * 60 * hz)
            lengths = _drift_lengths(rng, drift_budget, lo, hi)
            for start, length in zip(_place_segments(rng, n, lengths), lengths):
                sign = rng.choice((-1.0, 1.0))
                b0 = sign * rng.uniform(*cfg.drift_start) * sigma
                b1 = sign * rng.uniform(*cfg.drift_end) * sigma
                add_drift(tr, start, length, b0, b1)
        if n_spikes:
            guard = int(cfg.spike_guard_s * hz)
            csum = np.concatenate([[0], np.cumsum(tr.flag)])
            # whole-second starts whose [i - guard, i + 1 s + guard) neighbourhood is clean
            starts = np.arange(0, n - hz + 1, hz)
            lo_i = np.maximum(starts - guard, 0)
            hi_i = np.minimum(starts + hz + guard, n)
            cand = starts[csum[hi_i] == csum[lo_i]]
            taken = np.zeros(n, dtype=bool)
            placed = 0
            for i in rng.permutation(cand):
                if placed == n_spikes:
                    break
                if taken[i]:
                    continue
                add_spike(tr, int(i), rng.choice((-1.0, 1.0)) * rng.uniform(*cfg.spike_sigma) * sigma)
                taken[max(0, i - guard - hz):i + hz + guard + 1] = True
                placed += 1
    return out, labels_of(out)
