"""Sensor placement and the physical base graph derived from it."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..graph import BaseGraph, ConfigurationError, ControlBinding, NODE_KINDS

OUTSIDE = "outside"
NATIVE_RATE_HZ = {"temperature": 1.0, "humidity": 1.0, "light": 2.0, "door": 1.0}


@dataclass(frozen=True)
class Sensor:
    id: str
    kind: str
    room: str

    @property
    def rate_hz(self) -> float:
        return NATIVE_RATE_HZ[self.kind]


@dataclass
class SensorLayout:
    """Rooms, their sensors and the doors between them.

    ``doors`` maps a door sensor id to the two spaces it joins; either side
    may be ``"outside"``. A door sensor's ``room`` field is informational.
    """

    rooms: list[str]
    sensors: list[Sensor]
    doors: dict[str, tuple[str, str]]
    intra_weight: float = 1.0
    cross_weight: float = 0.5
    cross_kinds: tuple[str, ...] = ("temperature", "humidity")

    def __post_init__(self) -> None:
        self.doors = {k: tuple(v) for k, v in self.doors.items()}
        self.cross_kinds = tuple(self.cross_kinds)
        self.validate()

    def validate(self) -> None:
        if not self.sensors:
            raise ConfigurationError("layout has no sensors")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("sensor ids must be unique")
        known = set(self.rooms) | {OUTSIDE}
        for s in self.sensors:
            if s.kind not in NODE_KINDS:
                raise ConfigurationError(f"sensor {s.id}: unknown kind {s.kind!r}")
            if s.kind == "door":
                if s.id not in self.doors:
                    raise ConfigurationError(f"door sensor {s.id} has no room pair")
            elif s.room not in self.rooms:
                raise ConfigurationError(f"sensor {s.id}: unknown room {s.room!r}")
        door_ids = {s.id for s in self.sensors if s.kind == "door"}
        for d, (a, b) in self.doors.items():
            if d not in door_ids:
                raise ConfigurationError(f"door entry {d} is not a door sensor")
            if a == b or a not in known or b not in known:
                raise ConfigurationError(f"door {d} must join two distinct known spaces, got {(a, b)}")

    @property
    def sensor_ids(self) -> list[str]:
        return [s.id for s in self.sensors]

    @property
    def door_ids(self) -> list[str]:
        return [s.id for s in self.sensors if s.kind == "door"]

    def counts(self) -> dict[str, int]:
        return {k: sum(s.kind == k for s in self.sensors) for k in NODE_KINDS}

    def base_graph(self) -> tuple[BaseGraph, list[ControlBinding]]:
        """Physical base graph and door bindings.

        Non-door sensors in the same room are fully connected with
        ``intra_weight``. For every door joining two rooms, same-kind sensors
        of ``cross_kinds`` across the door are connected with ``cross_weight``
        and those edges are gated by the door. Door nodes carry only their
        self-loop, so door state reaches other nodes solely through gating.
        """
        n = len(self.sensors)
        idx = {s.id: i for i, s in enumerate(self.sensors)}
        a = np.eye(n)
        for i, si in enumerate(self.sensors):
            for j, sj in enumerate(self.sensors):
                if i != j and si.kind != "door" and sj.kind != "door" and si.room == sj.room:
                    a[i, j] = self.intra_weight
        bindings = []
        for d, (ra, rb) in self.doors.items():
            pairs = []
            for si in self.sensors:
                for sj in self.sensors:
                    if (si.room == ra and sj.room == rb and si.kind == sj.kind
                            and si.kind in self.cross_kinds):
                        i, j = idx[si.id], idx[sj.id]
                        a[i, j] = a[j, i] = self.cross_weight
                        pairs.append((i, j))
            bindings.append(ControlBinding.symmetric(idx[d], pairs))
        base = BaseGraph(a, [s.kind for s in self.sensors],
                         [s.room if s.kind != "door" else "|".join(self.doors[s.id]) for s in self.sensors],
                         [s.id for s in self.sensors])
        return base, bindings

    def to_dict(self) -> dict:
        return {
            "rooms": list(self.rooms),
            "sensors": [{"id": s.id, "kind": s.kind, "room": s.room} for s in self.sensors],
            "doors": {k: list(v) for k, v in self.doors.items()},
            "intra_weight": self.intra_weight,
            "cross_weight": self.cross_weight,
            "cross_kinds": list(self.cross_kinds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorLayout":
        try:
            return cls(rooms=list(d["rooms"]),
                       sensors=[Sensor(s["id"], s["kind"], s["room"]) for s in d["sensors"]],
                       doors={k: tuple(v) for k, v in d["doors"].items()},
                       intra_weight=float(d.get("intra_weight", 1.0)),
                       cross_weight=float(d.get("cross_weight", 0.5)),
                       cross_kinds=tuple(d.get("cross_kinds", ("temperature", "humidity"))))
        except KeyError as exc:
            raise ConfigurationError(f"layout is missing key {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SensorLayout":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_ROOMS = ["hall", "living", "kitchen", "bedroom_1", "bedroom_2", "bathroom", "office", "laundry"]
DEFAULT_DOORS = [("hall", "living"), ("hall", "kitchen"), ("hall", "bedroom_1"), ("hall", "bedroom_2"),
                 ("hall", "bathroom"), ("hall", "office"), ("kitchen", "laundry")]


def default_layout() -> SensorLayout:
    """Eight rooms, one temperature/humidity/light sensor each, seven interior
    doors: 8 + 8 + 8 + 7 = 31 sensors."""
    sensors = []
    for r in DEFAULT_ROOMS:
        sensors += [Sensor(f"T_{r}", "temperature", r), Sensor(f"H_{r}", "humidity", r),
                    Sensor(f"L_{r}", "light", r)]
    doors = {}
    for a, b in DEFAULT_DOORS:
        did = f"D_{a}_{b}"
        sensors.append(Sensor(did, "door", a))
        doors[did] = (a, b)
    return SensorLayout(list(DEFAULT_ROOMS), sensors, doors)


def two_room_layout() -> SensorLayout:
    """Minimal layout used for coupling checks."""
    sensors = [Sensor("T_a", "temperature", "a"), Sensor("H_a", "humidity", "a"),
               Sensor("T_b", "temperature", "b"), Sensor("H_b", "humidity", "b"),
               Sensor("D_ab", "door", "a")]
    return SensorLayout(["a", "b"], sensors, {"D_ab": ("a", "b")})
