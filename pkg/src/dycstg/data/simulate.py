"""Synthetic smart-home sensor streams with door-coupled room physics.

Each room has an air temperature and humidity that relax toward a wandering
room target. While a door is open, the two rooms it joins relax toward each
other (coupling constant ``k_open``); a closed door removes that coupling.
Occupancy periods switch a room's lamp on and add heat and moisture to its
air with a short time constant. Light is daylight plus the lamp. Door sensors
report their open (1) / closed (0) state.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.signal import lfilter

from ..graph import ConfigurationError
from .layout import OUTSIDE, SensorLayout

KIND_CODES = {"none": 0, "spike": 1, "drift": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


@dataclass
class SensorTrace:
    sensor_id: str
    kind: str
    room: str
    t: np.ndarray           # seconds since start, strictly increasing
    values: np.ndarray
    flag: np.ndarray = None           # True where the value was corrupted
    anomaly_kind: np.ndarray = None   # KIND_CODES per sample

    def __post_init__(self) -> None:
        if self.flag is None:
            self.flag = np.zeros(len(self.t), dtype=bool)
        if self.anomaly_kind is None:
            self.anomaly_kind = np.zeros(len(self.t), dtype=np.uint8)

    def copy(self) -> "SensorTrace":
        return SensorTrace(self.sensor_id, self.kind, self.room, self.t.copy(), self.values.copy(),
                           self.flag.copy(), self.anomaly_kind.copy())


@dataclass
class DoorEvent:
    t: float
    door_id: str
    state: int


@dataclass
class RawSeries:
    traces: dict[str, SensorTrace]
    events: list[DoorEvent]
    duration_s: float

    def copy(self) -> "RawSeries":
        return RawSeries({k: v.copy() for k, v in self.traces.items()},
                         [DoorEvent(e.t, e.door_id, e.state) for e in self.events], self.duration_s)

    def n_points(self) -> int:
        return sum(len(tr.t) for tr in self.traces.values())

    def anomaly_fraction(self) -> float:
        n = self.n_points()
        return sum(int(tr.flag.sum()) for tr in self.traces.values()) / n if n else 0.0

    def transition_count(self) -> int:
        """Door state changes, excluding the initial-state records at t=0."""
        return sum(1 for e in self.events if e.t > 0)


@dataclass
class SimConfig:
    dt_physics: float = 10.0
    temp_setpoint: tuple[float, float] = (18.0, 26.0)
    hum_setpoint: tuple[float, float] = (35.0, 65.0)
    tau_room: float = 1800.0
    k_open: float = 1.0 / 240.0
    wander_tau: float = 3 * 3600.0
    wander_temp: float = 0.8
    wander_hum: float = 4.0
    activity_per_hour: float = 0.3
    activity_temp: tuple[float, float] = (1.0, 3.0)
    activity_hum: tuple[float, float] = (5.0, 15.0)
    activity_minutes: tuple[float, float] = (10.0, 40.0)
    tau_activity: float = 120.0     # occupant heat/moisture reaches the room air within minutes
    outdoor_temp: tuple[float, float] = (12.0, 5.0)    # mean, diurnal amplitude
    outdoor_hum: float = 70.0
    daylight_peak: tuple[float, float] = (50.0, 300.0)
    lamp_lux: tuple[float, float] = (150.0, 350.0)
    noise: dict = field(default_factory=lambda: {"temperature": 0.05, "humidity": 0.3, "light": 4.0})
    door_closed_minutes: float = 90.0
    door_open_minutes: float = 12.0
    door_policy: dict = field(default_factory=dict)    # door id -> "open" | "closed"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in names:
                raise ConfigurationError(f"unknown simulator setting {k!r}")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


def _door_states(rng, n_seconds: int, cfg: SimConfig, policy: str | None) -> np.ndarray:
    """Per-second 0/1 state from an alternating renewal process."""
    if policy == "open":
        return np.ones(n_seconds, dtype=np.int8)
    if policy == "closed":
        return np.zeros(n_seconds, dtype=np.int8)
    if policy is not None:
        raise ConfigurationError(f"unknown door policy {policy!r}")
    p_open = cfg.door_open_minutes / (cfg.door_open_minutes + cfg.door_closed_minutes)
    state = int(rng.random() < p_open)
    out = np.empty(n_seconds, dtype=np.int8)
    t = 0
    while t < n_seconds:
        mean = cfg.door_open_minutes if state else cfg.door_closed_minutes
        dur = max(1, int(round(rng.exponential(mean * 60.0))))
        out[t:t + dur] = state
        t += dur
        state = 1 - state
    return out


def _ou(rng, n: int, k: int, sigma: float, tau: float, dt: float) -> np.ndarray:
    a = np.exp(-dt / tau)
    shocks = rng.normal(0.0, sigma * np.sqrt(1 - a * a), size=(n, k))
    start = rng.normal(0.0, sigma, size=(1, k))
    out = lfilter([1.0], [1.0, -a], shocks, axis=0, zi=a * start)[0]
    return out


def _pulses(rng, n: int, dt: float, rate_per_hour: float, amp: tuple[float, float],
            minutes: tuple[float, float]) -> np.ndarray:
    """Sum of rectangular pulses from a Poisson process on a grid of ``n`` steps."""
    out = np.zeros(n)
    horizon = n * dt
    t = rng.exponential(3600.0 / rate_per_hour)
    while t < horizon:
        dur = rng.uniform(*minutes) * 60.0
        a = rng.uniform(*amp)
        i0, i1 = int(t // dt), int(min(horizon, t + dur) // dt)
        out[i0:i1] += a
        t += dur + rng.exponential(3600.0 / rate_per_hour)
    return out


def simulate(layout: SensorLayout, seed: int, duration_hours: float,
             config: SimConfig | None = None) -> RawSeries:
    """Generate clean raw series for every sensor in ``layout``.

    Deterministic for a given ``(layout, seed, duration_hours, config)``.
    """
    cfg = config or SimConfig()
    if duration_hours <= 0:
        raise ConfigurationError("duration must be positive")
    layout.validate()
    rng = np.random.default_rng(seed)
    duration = float(duration_hours) * 3600.0
    n_sec = int(round(duration))
    rooms = list(layout.rooms)
    R = len(rooms)
    ridx = {r: i for i, r in enumerate(rooms)}
    dt = cfg.dt_physics
    n_phys = int(np.ceil(duration / dt)) + 1
    t_phys = np.arange(n_phys) * dt

    # doors ------------------------------------------------------------------
    door_ids = layout.door_ids
    states = {d: _door_states(rng, n_sec, cfg, cfg.door_policy.get(d)) for d in door_ids}
    events: list[DoorEvent] = []
    for d in door_ids:
        s = states[d]
        events.append(DoorEvent(0.0, d, int(s[0])))
        for i in np.flatnonzero(np.diff(s)) + 1:
            events.append(DoorEvent(float(i), d, int(s[i])))
    events.sort(key=lambda e: (e.t, door_ids.index(e.door_id)))

    # room targets -----------------------------------------------------------
    t_set = rng.uniform(*cfg.temp_setpoint, size=R)
    h_set = rng.uniform(*cfg.hum_setpoint, size=R)
    t_tgt = t_set + _ou(rng, n_phys, R, cfg.wander_temp, cfg.wander_tau, dt)
    h_tgt = h_set + _ou(rng, n_phys, R, cfg.wander_hum, cfg.wander_tau, dt)
    # occupancy drives heat, moisture and the room lamp together
    occupied = np.zeros((n_phys, R))
    for r in range(R):
        occupied[:, r] = np.minimum(_pulses(rng, n_phys, dt, cfg.activity_per_hour, (1.0, 1.0),
                                            cfg.activity_minutes), 1.0)
    # fast first-order response to occupancy; its increments enter the coupled room state below
    a_act = np.exp(-dt / cfg.tau_activity)
    local = lfilter([1.0 - a_act], [1.0, -a_act], occupied, axis=0)
    act_t = local * rng.uniform(*cfg.activity_temp, size=R)
    act_h = local * rng.uniform(*cfg.activity_hum, size=R)
    day = 2 * np.pi * t_phys / 86400.0
    out_t = cfg.outdoor_temp[0] + cfg.outdoor_temp[1] * np.sin(day - np.pi / 2)

    # coupled relaxation -----------------------------------------------------
    door_pairs = [(layout.doors[d][0], layout.doors[d][1]) for d in door_ids]
    phys_sec = np.minimum(t_phys.astype(np.int64), n_sec - 1)
    door_mat = np.stack([states[d][phys_sec] for d in door_ids], axis=1) if door_ids else \
        np.zeros((n_phys, 0), dtype=np.int8)
    cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def coupling(row: np.ndarray):
        key = row.tobytes()
        if key not in cache:
            lap = np.zeros((R, R))
            ext = np.zeros(R)   # coupling to outdoors
            for open_, (a, b) in zip(row, door_pairs):
                if not open_:
                    continue
                if a == OUTSIDE or b == OUTSIDE:
                    ext[ridx[b if a == OUTSIDE else a]] += cfg.k_open
                    continue
                i, j = ridx[a], ridx[b]
                lap[i, i] += cfg.k_open
                lap[j, j] += cfg.k_open
                lap[i, j] -= cfg.k_open
                lap[j, i] -= cfg.k_open
            cache[key] = (np.eye(R) - dt * (lap + np.diag(ext) + np.eye(R) / cfg.tau_room), dt * ext)
        return cache[key]

    temp = np.empty((n_phys, R))
    hum = np.empty((n_phys, R))
    temp[0], hum[0] = t_tgt[0], h_tgt[0]
    step_t = dt / cfg.tau_room
    for k in range(n_phys - 1):
        m, e = coupling(door_mat[k])
        temp[k + 1] = m @ temp[k] + step_t * t_tgt[k] + e * out_t[k] + (act_t[k + 1] - act_t[k])
        hum[k + 1] = m @ hum[k] + step_t * h_tgt[k] + e * cfg.outdoor_hum + (act_h[k + 1] - act_h[k])

    # light ------------------------------------------------------------------
    peaks = rng.uniform(*cfg.daylight_peak, size=R)
    lamps = occupied * rng.uniform(*cfg.lamp_lux, size=R)

    # sample at native rates ---------------------------------------------------
    traces: dict[str, SensorTrace] = {}
    for s in layout.sensors:
        rate = s.rate_hz
        t = np.arange(int(round(duration * rate))) / rate
        if s.kind == "door":
            v = states[s.id][np.minimum(t.astype(np.int64), n_sec - 1)].astype(np.float64)
        else:
            r = ridx[s.room]
            if s.kind == "temperature":
                base = np.interp(t, t_phys, temp[:, r])
            elif s.kind == "humidity":
                base = np.interp(t, t_phys, hum[:, r])
            else:
                sun = np.maximum(0.0, np.sin(2 * np.pi * t / 86400.0 - np.pi / 2))
                lamp = lamps[:, r][np.minimum((t // dt).astype(np.int64), n_phys - 1)]
                base = peaks[r] * sun + lamp
            v = base + rng.normal(0.0, cfg.noise[s.kind], size=len(t))
        traces[s.id] = SensorTrace(s.id, s.kind, s.room, t, v)
    return RawSeries(traces, events, duration)
