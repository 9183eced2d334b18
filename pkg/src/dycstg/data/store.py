"""On-disk window store: one ``windows.npz`` plus ``graph.json``.

The npz holds the aligned feature tensor ``(L, N, 9)``, credibility labels
``(L, N)``, per-step door states ``(L, n_doors)``, step timestamps, and the
window start indices of each split. Windows themselves are re-sliced on
load, so the store costs one copy of the series rather than one per window.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..graph import load_graph_config, save_graph_config
from .preprocess import DataError, DoorAdjacency, WindowSet

SPLITS = ("train", "val", "test")


@dataclass
class WindowStore:
    features: np.ndarray
    labels: np.ndarray
    door_states: np.ndarray
    timestamps: np.ndarray
    starts: dict[str, np.ndarray]
    T: int
    stride: int
    adjacency: DoorAdjacency
    sensor_ids: list[str]

    def split(self, name: str) -> WindowSet:
        if name not in self.starts:
            raise KeyError(f"unknown split {name!r}")
        return WindowSet(self.features, self.labels, self.timestamps, self.adjacency,
                         self.starts[name], self.T)

    def splits(self) -> tuple[WindowSet, WindowSet, WindowSet]:
        return tuple(self.split(s) for s in SPLITS)

    def counts(self) -> dict[str, int]:
        return {s: int(len(self.starts[s])) for s in SPLITS}


def store_from_splits(train: WindowSet, val: WindowSet, test: WindowSet, stride: int,
                      sensor_ids: list[str]) -> WindowStore:
    adj = train.adj
    if not isinstance(adj, DoorAdjacency):
        raise TypeError("window store needs door-driven adjacency")
    return WindowStore(train.features, train.labels, adj.door_states, train.timestamps,
                       {"train": train.starts, "val": val.starts, "test": test.starts},
                       train.T, stride, adj, list(sensor_ids))


def save_store(directory, store: WindowStore) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savez(d / "windows.npz", features=store.features, labels=store.labels,
             door_states=store.door_states, timestamps=store.timestamps,
             train=store.starts["train"], val=store.starts["val"], test=store.starts["test"],
             T=np.int64(store.T), stride=np.int64(store.stride),
             sensor_ids=np.array(store.sensor_ids))
    save_graph_config(d / "graph.json", store.adjacency.base, store.adjacency.bindings)


def load_store(directory) -> WindowStore:
    d = Path(directory)
    if not (d / "windows.npz").exists() or not (d / "graph.json").exists():
        raise DataError(f"{d} does not contain a window store (windows.npz + graph.json)")
    base, bindings = load_graph_config(d / "graph.json")
    with np.load(d / "windows.npz") as z:
        states = z["door_states"]
        adj = DoorAdjacency(base, bindings, states)
        return WindowStore(z["features"], z["labels"], states, z["timestamps"],
                           {s: z[s] for s in SPLITS}, int(z["T"]), int(z["stride"]), adj,
                           [str(s) for s in z["sensor_ids"]])
