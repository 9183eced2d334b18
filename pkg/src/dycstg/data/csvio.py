"""Raw dataset CSV files.

Readings: ``timestamp,sensor_id,kind,value,label,anomaly_kind`` with label
1 = trustworthy. Door events: ``timestamp,door_id,state``. Floats are
written with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pandas as pd

from .preprocess import DataError
from .simulate import KIND_CODES, KIND_NAMES, DoorEvent, RawSeries, SensorTrace

READING_COLUMNS = ["timestamp", "sensor_id", "kind", "value", "label", "anomaly_kind"]
EVENT_COLUMNS = ["timestamp", "door_id", "state"]
FLOAT_FMT = "%.17g"


class CSVParseError(DataError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.line = line


def write_readings(path, series: RawSeries) -> None:
    frames = []
    for tr in series.traces.values():
        n = len(tr.t)
        frames.append(pd.DataFrame({
            "timestamp": tr.t,
            "sensor_id": np.full(n, tr.sensor_id, dtype=object),
            "kind": np.full(n, tr.kind, dtype=object),
            "value": tr.values,
            "label": (~tr.flag).astype(np.int8),
            "anomaly_kind": np.array([KIND_NAMES[k] for k in range(len(KIND_NAMES))],
                                     dtype=object)[tr.anomaly_kind],
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=READING_COLUMNS)
    df.to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")


def write_events(path, events: list[DoorEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow([FLOAT_FMT % e.t, e.door_id, int(e.state)])


def write_csv(directory, series: RawSeries) -> None:
    """Write ``readings.csv`` and ``events.csv`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_readings(d / "readings.csv", series)
    write_events(d / "events.csv", series.events)


def _scan_for_error(path, columns: list[str], checks) -> CSVParseError:
    """Slow pass that pinpoints the first malformed line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != columns:
            return CSVParseError(path, 1, f"expected header {','.join(columns)}, got {header}")
        for row in reader:
            line = reader.line_num
            if len(row) != len(columns):
                return CSVParseError(path, line, f"expected {len(columns)} fields, got {len(row)}")
            for col, check in checks.items():
                val = row[columns.index(col)]
                try:
                    ok = check(val)
                except ValueError:
                    ok = False
                if not ok:
                    return CSVParseError(path, line, f"bad {col} value {val!r}")
    return CSVParseError(path, 0, "unparseable file")


def _finite(v: str) -> bool:
    return np.isfinite(float(v))


_READING_CHECKS = {"timestamp": _finite, "value": lambda v: float(v) == float(v),
                   "label": lambda v: v in ("0", "1"), "anomaly_kind": lambda v: v in KIND_CODES,
                   "kind": lambda v: v in ("temperature", "humidity", "light", "door")}
_EVENT_CHECKS = {"timestamp": _finite, "state": lambda v: v in ("0", "1")}


def _read(path, columns, checks, dtypes) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=dtypes, keep_default_na=False, na_filter=False,
                         float_precision="round_trip")
    except (ValueError, pd.errors.ParserError):
        raise _scan_for_error(path, columns, checks) from None
    if list(df.columns) != columns:
        raise CSVParseError(path, 1, f"expected header {','.join(columns)}, got {list(df.columns)}")
    for col, check in checks.items():
        if df[col].dtype == object:
            bad = ~df[col].isin([v for v in set(df[col]) if _safe(check, v)])
        elif col == "timestamp":
            bad = ~np.isfinite(df[col].to_numpy())
        elif col in ("label", "state"):
            bad = ~df[col].isin([0, 1])
        else:
            continue
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise CSVParseError(path, i + 2, f"bad {col} value {df[col].iloc[i]!r}")
    return df


def _safe(check, v) -> bool:
    try:
        return bool(check(str(v)))
    except ValueError:
        return False


def load_readings(path) -> dict[str, SensorTrace]:
    df = _read(path, READING_COLUMNS, _READING_CHECKS,
               {"timestamp": np.float64, "sensor_id": str, "kind": str, "value": np.float64,
                "label": np.int64, "anomaly_kind": str})
    traces: dict[str, SensorTrace] = {}
    if df.empty:
        return traces
    codes = df["anomaly_kind"].map(KIND_CODES).to_numpy(np.uint8)
    for sid, idx in df.groupby("sensor_id", sort=False).indices.items():
        kinds = df["kind"].iloc[idx].unique()
        if len(kinds) != 1:
            raise CSVParseError(path, int(idx[0]) + 2, f"sensor {sid} has several kinds {list(kinds)}")
        t = df["timestamp"].to_numpy()[idx]
        if np.any(np.diff(t) <= 0):
            raise CSVParseError(path, int(idx[0]) + 2, f"sensor {sid}: timestamps not increasing")
        traces[sid] = SensorTrace(sid, str(kinds[0]), "", t, df["value"].to_numpy()[idx].copy(),
                                  df["label"].to_numpy()[idx] == 0, codes[idx].copy())
    return traces


def load_events(path) -> list[DoorEvent]:
    df = _read(path, EVENT_COLUMNS, _EVENT_CHECKS,
               {"timestamp": np.float64, "door_id": str, "state": np.int64})
    return [DoorEvent(float(t), str(d), int(s))
            for t, d, s in zip(df["timestamp"], df["door_id"], df["state"])]


def load_csv(directory, layout=None, duration_s: float | None = None) -> RawSeries:
    """Read a dataset written by :func:`write_csv`.

    Rooms are filled from ``layout`` when given. Without ``duration_s`` the
    duration is inferred as the longest ``n_samples / rate`` over sensors.
    """
    d = Path(directory)
    for name in ("readings.csv", "events.csv"):
        if not (d / name).exists():
            raise DataError(f"missing {d / name}")
    traces = load_readings(d / "readings.csv")
    events = load_events(d / "events.csv")
    if layout is not None:
        rooms = {s.id: s.room for s in layout.sensors}
        missing = set(layout.sensor_ids) - set(traces)
        if missing:
            raise DataError(f"sensors missing from readings: {sorted(missing)}")
        traces = {sid: traces[sid] for sid in layout.sensor_ids}
        for sid, tr in traces.items():
            tr.room = rooms[sid]
    if duration_s is None:
        duration_s = 0.0
        for tr in traces.values():
            step = float(tr.t[1] - tr.t[0]) if len(tr.t) > 1 else 1.0
            duration_s = max(duration_s, len(tr.t) * step)
    return RawSeries(traces, events, float(duration_s))
