"""Event-driven dynamic adjacency.

A latent base graph lists every pathway that can ever carry information.
Control nodes (doors) switch a subset of those edges on and off:

    A^t(i, j) = f_mod(s_c^t) * A_base(i, j)   for edges gated by control c
    A^t(i, j) = A_base(i, j)                  otherwise

Only ``binary_identity`` (``f_mod(s) = s``) is implemented. Time indices in
this module are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

NODE_KINDS = ("temperature", "humidity", "light", "door")
F_MOD = {"binary_identity": lambda s: s}


class ConfigurationError(ValueError):
    """Invalid graph, binding or control-state configuration."""


@dataclass
class BaseGraph:
    a_base: np.ndarray
    node_kind: list[str]
    node_room: list[str]
    node_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.a_base = np.asarray(self.a_base, dtype=np.float64)
        n = self.a_base.shape[0]
        if not self.node_ids:
            self.node_ids = [f"n{i}" for i in range(n)]
        if self.a_base.shape != (n, n):
            raise ConfigurationError(f"a_base must be square, got {self.a_base.shape}")
        if not (len(self.node_kind) == len(self.node_room) == len(self.node_ids) == n):
            raise ConfigurationError("node metadata length does not match a_base")
        if len(set(self.node_ids)) != n:
            raise ConfigurationError("node ids must be unique")
        bad = set(self.node_kind) - set(NODE_KINDS)
        if bad:
            raise ConfigurationError(f"unknown node kinds {sorted(bad)}")
        if not np.array_equal(self.a_base, self.a_base.T):
            raise ConfigurationError("a_base must be symmetric")
        if not np.all(np.diag(self.a_base) == 1.0):
            raise ConfigurationError("a_base diagonal must be 1 (self-loops)")
        if self.a_base.min() < 0.0 or self.a_base.max() > 1.0:
            raise ConfigurationError("a_base weights must lie in [0, 1]")

    @property
    def n_nodes(self) -> int:
        return self.a_base.shape[0]

    def index(self, node_id: str) -> int:
        return self.node_ids.index(node_id)


@dataclass(frozen=True)
class ControlBinding:
    control_node: int
    gated_edges: frozenset[tuple[int, int]]
    f_mod_id: str = "binary_identity"

    @classmethod
    def symmetric(cls, control_node: int, pairs, f_mod_id: str = "binary_identity") -> "ControlBinding":
        """Build a binding from undirected pairs, adding both orientations."""
        edges = set()
        for i, j in pairs:
            edges.add((int(i), int(j)))
            edges.add((int(j), int(i)))
        return cls(int(control_node), frozenset(edges), f_mod_id)

    def validate(self, base: BaseGraph) -> None:
        n = base.n_nodes
        if not 0 <= self.control_node < n:
            raise ConfigurationError(f"control node {self.control_node} out of range")
        if base.node_kind[self.control_node] != "door":
            raise ConfigurationError(f"control node {self.control_node} is not a door")
        if self.f_mod_id not in F_MOD:
            raise ConfigurationError(f"unknown modulation function {self.f_mod_id!r}")
        for i, j in self.gated_edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ConfigurationError(f"gated edge {(i, j)} out of range")
            if i == j:
                raise ConfigurationError(f"self-loop {(i, j)} cannot be gated")
            if base.a_base[i, j] <= 0:
                raise ConfigurationError(f"gated edge {(i, j)} is absent from a_base")
            if (j, i) not in self.gated_edges:
                raise ConfigurationError(f"gated edge {(i, j)} lacks its reverse")


@dataclass
class DynamicAdjacencySequence:
    """Stacked per-step adjacency, shape ``(T, N, N)``."""

    mats: np.ndarray

    def __len__(self) -> int:
        return self.mats.shape[0]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.mats[t]


def _check_bindings(base: BaseGraph, bindings: Sequence[ControlBinding]) -> None:
    seen: dict[tuple[int, int], int] = {}
    for b in bindings:
        b.validate(base)
        for e in b.gated_edges:
            if e in seen:
                raise ConfigurationError(
                    f"edge {e} gated by both control {seen[e]} and control {b.control_node}")
            seen[e] = b.control_node


def build_adjacency_sequence(base: BaseGraph, bindings: Sequence[ControlBinding],
                             states: Mapping[int, np.ndarray], T: int) -> DynamicAdjacencySequence:
    """Modulate ``base`` with per-step control states.

    ``states`` maps a control node index to a length-``T`` array of states
    in [0, 1].
    """
    _check_bindings(base, bindings)
    mats = np.broadcast_to(base.a_base, (T, base.n_nodes, base.n_nodes)).copy()
    for b in bindings:
        if b.control_node not in states:
            raise ConfigurationError(f"no state series for control node {b.control_node}")
        s = np.asarray(states[b.control_node], dtype=np.float64)
        if s.shape != (T,):
            raise ConfigurationError(
                f"state series for control {b.control_node} has shape {s.shape}, expected ({T},)")
        if s.min(initial=0.0) < 0.0 or s.max(initial=0.0) > 1.0:
            raise ConfigurationError(f"states of control {b.control_node} leave [0, 1]")
        if not b.gated_edges:
            continue
        fs = F_MOD[b.f_mod_id](s)
        ii, jj = np.array(sorted(b.gated_edges)).T
        mats[:, ii, jj] = fs[:, None] * base.a_base[ii, jj][None, :]
    return DynamicAdjacencySequence(mats)


def neighbor_mask_at(seq: DynamicAdjacencySequence, t: int) -> np.ndarray:
    """Binary attention mask for step ``t``: 1 where ``A^t > 0``, diagonal forced to 1."""
    if not 0 <= t < len(seq):
        raise IndexError(f"step {t} outside [0, {len(seq)})")
    return _mask(seq.mats[t])


def neighbor_masks(seq: DynamicAdjacencySequence) -> np.ndarray:
    """All masks at once, shape ``(T, N, N)``."""
    return _mask(seq.mats)


def _mask(a: np.ndarray) -> np.ndarray:
    m = (a > 0).astype(np.float64)
    n = a.shape[-1]
    idx = np.arange(n)
    m[..., idx, idx] = 1.0
    return m


def static_sequence(base: BaseGraph, T: int) -> DynamicAdjacencySequence:
    return DynamicAdjacencySequence(np.broadcast_to(base.a_base, (T,) + base.a_base.shape).copy())


# ------------------------------------------------------------ config file IO

def graph_to_dict(base: BaseGraph, bindings: Sequence[ControlBinding]) -> dict:
    ids = base.node_ids
    nodes = [{"id": ids[i], "kind": base.node_kind[i], "room": base.node_room[i]}
             for i in range(base.n_nodes)]
    edges = []
    for i in range(base.n_nodes):
        for j in range(i + 1, base.n_nodes):
            if base.a_base[i, j] > 0:
                edges.append({"source": ids[i], "target": ids[j], "weight": float(base.a_base[i, j])})
    binds = []
    for b in bindings:
        pairs = sorted({(min(i, j), max(i, j)) for i, j in b.gated_edges})
        binds.append({"control": ids[b.control_node], "f_mod": b.f_mod_id,
                      "edges": [[ids[i], ids[j]] for i, j in pairs]})
    return {"nodes": nodes, "edges": edges, "bindings": binds}


def graph_from_dict(doc: Mapping) -> tuple[BaseGraph, list[ControlBinding]]:
    try:
        nodes = doc["nodes"]
        ids = [str(n["id"]) for n in nodes]
        pos = {k: i for i, k in enumerate(ids)}
        a = np.eye(len(ids))
        for e in doc.get("edges", []):
            i, j = pos[e["source"]], pos[e["target"]]
            a[i, j] = a[j, i] = float(e["weight"])
        base = BaseGraph(a, [n["kind"] for n in nodes], [str(n["room"]) for n in nodes], ids)
        bindings = [ControlBinding.symmetric(pos[b["control"]],
                                             [(pos[u], pos[v]) for u, v in b["edges"]],
                                             b.get("f_mod", "binary_identity"))
                    for b in doc.get("bindings", [])]
    except KeyError as exc:
        raise ConfigurationError(f"graph config references unknown key or node {exc}") from None
    _check_bindings(base, bindings)
    return base, bindings


def save_graph_config(path, base: BaseGraph, bindings: Sequence[ControlBinding]) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(base, bindings), indent=2))


def load_graph_config(path) -> tuple[BaseGraph, list[ControlBinding]]:
    return graph_from_dict(json.loads(Path(path).read_text()))
