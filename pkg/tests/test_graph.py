import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycstg.graph import (BaseGraph, ConfigurationError, ControlBinding, build_adjacency_sequence,
                          graph_from_dict, graph_to_dict, load_graph_config, neighbor_mask_at,
                          neighbor_masks, save_graph_config, static_sequence)


def four_node():
    a = np.eye(4)
    for i, j, w in [(0, 1, 1.0), (1, 2, 0.5), (0, 3, 0.7), (2, 3, 1.0)]:
        a[i, j] = a[j, i] = w
    base = BaseGraph(a, ["temperature", "temperature", "door", "humidity"], ["a", "a", "a|b", "b"])
    return base, [ControlBinding.symmetric(2, [(0, 3)])]


def test_all_closed_removes_gated_edges_only():
    base, b = four_node()
    seq = build_adjacency_sequence(base, b, {2: np.zeros(5)}, 5)
    assert np.all(seq.mats[:, 0, 3] == 0) and np.all(seq.mats[:, 3, 0] == 0)
    other = np.ones((4, 4), bool)
    other[0, 3] = other[3, 0] = False
    assert np.all(seq.mats[:, other] == base.a_base[other])


def test_all_open_reproduces_base():
    base, b = four_node()
    seq = build_adjacency_sequence(base, b, {2: np.ones(6)}, 6)
    assert np.array_equal(seq.mats, np.broadcast_to(base.a_base, (6, 4, 4)))


def test_four_step_hand_example():
    base, b = four_node()
    seq = build_adjacency_sequence(base, b, {2: np.array([0.0, 1.0, 1.0, 0.0])}, 4)
    assert [seq[t][0, 3] for t in range(4)] == [0.0, 0.7, 0.7, 0.0]
    for t in range(4):
        rest = seq[t].copy()
        rest[0, 3] = rest[3, 0] = base.a_base[0, 3]
        assert np.array_equal(rest, base.a_base)
    # masks: 0-based step index 0 is the first step
    assert neighbor_mask_at(seq, 0)[0, 3] == 0.0
    assert neighbor_mask_at(seq, 1)[0, 3] == 1.0


def test_duplicate_gating_is_rejected():
    base, _ = four_node()
    a = base.a_base.copy()
    kinds = list(base.node_kind)
    kinds[1] = "door"
    base2 = BaseGraph(a, kinds, base.node_room)
    bindings = [ControlBinding.symmetric(2, [(0, 3)]), ControlBinding.symmetric(1, [(0, 3)])]
    with pytest.raises(ConfigurationError, match="gated by both"):
        build_adjacency_sequence(base2, bindings, {1: np.ones(2), 2: np.ones(2)}, 2)


def test_missing_state_series_is_rejected():
    base, b = four_node()
    with pytest.raises(ConfigurationError, match="no state series"):
        build_adjacency_sequence(base, b, {}, 3)


def test_wrong_state_length_is_rejected():
    base, b = four_node()
    with pytest.raises(ConfigurationError):
        build_adjacency_sequence(base, b, {2: np.ones(2)}, 3)


@pytest.mark.parametrize("edges, msg", [
    ([(0, 2)], "absent"),            # edge not in a_base
    ([(1, 1)], "self-loop"),
])
def test_invalid_bindings(edges, msg):
    base, _ = four_node()
    b = ControlBinding(2, frozenset(edges))
    with pytest.raises(ConfigurationError, match=msg):
        build_adjacency_sequence(base, [b], {2: np.ones(2)}, 2)


def test_binding_without_reverse_edge_rejected():
    base, _ = four_node()
    with pytest.raises(ConfigurationError, match="reverse"):
        build_adjacency_sequence(base, [ControlBinding(2, frozenset({(0, 3)}))], {2: np.ones(2)}, 2)


def test_control_must_be_door():
    base, _ = four_node()
    with pytest.raises(ConfigurationError, match="not a door"):
        build_adjacency_sequence(base, [ControlBinding.symmetric(0, [(1, 2)])], {0: np.ones(2)}, 2)


@pytest.mark.parametrize("a", [
    np.array([[1.0, 0.5], [0.4, 1.0]]),     # asymmetric
    np.array([[0.0, 0.5], [0.5, 1.0]]),     # zero diagonal
    np.array([[1.0, 1.5], [1.5, 1.0]]),     # weight above 1
])
def test_base_graph_invariants(a):
    with pytest.raises(ConfigurationError):
        BaseGraph(a, ["temperature", "humidity"], ["r", "r"])


def test_mask_of_zero_offdiagonal_is_identity():
    seq = static_sequence(BaseGraph(np.eye(3), ["light"] * 3, ["r"] * 3), 2)
    assert np.array_equal(neighbor_mask_at(seq, 1), np.eye(3))


def test_mask_of_full_graph_is_all_ones():
    seq = static_sequence(BaseGraph(np.full((3, 3), 0.3) + 0.7 * np.eye(3), ["light"] * 3, ["r"] * 3), 1)
    assert np.array_equal(neighbor_mask_at(seq, 0), np.ones((3, 3)))


def test_mask_index_out_of_range():
    seq = static_sequence(BaseGraph(np.eye(2), ["light"] * 2, ["r"] * 2), 3)
    with pytest.raises(IndexError):
        neighbor_mask_at(seq, 3)
    with pytest.raises(IndexError):
        neighbor_mask_at(seq, -1)


def random_instance(r, n, n_doors, T):
    a = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            if r.random() < 0.6:
                a[i, j] = a[j, i] = float(r.uniform(0.1, 1.0))
    kinds = ["door" if k < n_doors else "temperature" for k in range(n)]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if a[i, j] > 0]
    r.shuffle(edges)
    bindings, states = [], {}
    for c in range(n_doors):
        take = edges[c::n_doors][: int(r.integers(0, 4))]
        bindings.append(ControlBinding.symmetric(c, take))
        states[c] = r.integers(0, 2, size=T).astype(float)
    return BaseGraph(a, kinds, ["r"] * n), bindings, states


def hand_oracle(base, bindings, states, T):
    """Entry-by-entry application of the modulation rule."""
    n = base.n_nodes
    out = np.zeros((T, n, n))
    gate_of = {}
    for b in bindings:
        for e in b.gated_edges:
            gate_of[e] = b.control_node
    for t in range(T):
        for i in range(n):
            for j in range(n):
                c = gate_of.get((i, j))
                out[t, i, j] = base.a_base[i, j] if c is None else states[c][t] * base.a_base[i, j]
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 7), st.integers(1, 2), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_modulation_matches_hand_oracle_and_invariants(n, n_doors, T, seed):
    r = np.random.default_rng(seed)
    base, bindings, states = random_instance(r, n, n_doors, T)
    seq = build_adjacency_sequence(base, bindings, states, T)
    assert np.array_equal(seq.mats, hand_oracle(base, bindings, states, T))
    assert np.all(seq.mats <= base.a_base)                       # monotone gating
    assert np.all(seq.mats == seq.mats.transpose(0, 2, 1))       # symmetric
    assert np.all(seq.mats[:, np.arange(n), np.arange(n)] == 1)  # unit diagonal
    gated = set().union(*(b.gated_edges for b in bindings))
    for i in range(n):
        for j in range(n):
            if (i, j) not in gated:
                assert np.all(seq.mats[:, i, j] == base.a_base[i, j])
    again = build_adjacency_sequence(base, bindings, states, T)
    assert again.mats.tobytes() == seq.mats.tobytes()


def test_masks_follow_positive_entries(rng):
    base, bindings, states = random_instance(rng, 6, 2, 5)
    seq = build_adjacency_sequence(base, bindings, states, 5)
    m = neighbor_masks(seq)
    expected = (seq.mats > 0).astype(float)
    assert np.array_equal(m, expected)


def test_graph_config_round_trip(tmp_path, rng):
    base, bindings, _ = random_instance(rng, 7, 2, 3)
    save_graph_config(tmp_path / "g.json", base, bindings)
    base2, bindings2 = load_graph_config(tmp_path / "g.json")
    assert np.array_equal(base.a_base, base2.a_base)
    assert base.node_kind == base2.node_kind and base.node_ids == base2.node_ids
    assert [(b.control_node, b.gated_edges) for b in bindings] == \
        [(b.control_node, b.gated_edges) for b in bindings2]
    doc = json.loads((tmp_path / "g.json").read_text())
    assert set(doc) == {"nodes", "edges", "bindings"}


def test_graph_config_unknown_node():
    base, b = four_node()
    doc = graph_to_dict(base, b)
    doc["bindings"][0]["edges"].append(["n0", "ghost"])
    with pytest.raises(ConfigurationError):
        graph_from_dict(doc)
