import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycstg.data.anomalies import ANOMALY_KINDS, add_spike, inject_anomalies
from dycstg.data.csvio import CSVParseError, load_csv, load_events, load_readings, write_csv
from dycstg.data.layout import Sensor, SensorLayout, default_layout, two_room_layout
from dycstg.data.preprocess import (DataError, DoorAdjacency, GapError, Normalizer, align,
                                    build_features, chronological_split, downsample, make_windows,
                                    smooth_savitzky_golay, window_count)
from dycstg.data.simulate import KIND_CODES, RawSeries, SensorTrace, SimConfig, simulate
from dycstg.data.store import load_store, save_store, store_from_splits
from dycstg.graph import ConfigurationError


@pytest.fixture(scope="module")
def week():
    return simulate(default_layout(), 42, 24 * 7)


@pytest.fixture(scope="module")
def day():
    return simulate(default_layout(), 3, 24)


# ------------------------------------------------------------------ layout

def test_default_layout_census():
    lay = default_layout()
    assert lay.counts() == {"temperature": 8, "humidity": 8, "light": 8, "door": 7}
    assert len(set(lay.sensor_ids)) == 31


def test_layout_round_trip(tmp_path):
    lay = default_layout()
    lay.save(tmp_path / "layout.json")
    assert SensorLayout.load(tmp_path / "layout.json").to_dict() == lay.to_dict()


def test_empty_layout_is_rejected():
    with pytest.raises(ConfigurationError):
        simulate(SensorLayout([], [], {}), 0, 1)


def test_duplicate_ids_are_rejected():
    with pytest.raises(ConfigurationError):
        SensorLayout(["a"], [Sensor("x", "temperature", "a"), Sensor("x", "humidity", "a")], {})


# --------------------------------------------------------------- simulator

def test_simulate_is_bit_identical_per_seed():
    a = simulate(two_room_layout(), 11, 6)
    b = simulate(two_room_layout(), 11, 6)
    for k in a.traces:
        assert a.traces[k].values.tobytes() == b.traces[k].values.tobytes()
    assert [(e.t, e.door_id, e.state) for e in a.events] == [(e.t, e.door_id, e.state) for e in b.events]
    c = simulate(two_room_layout(), 12, 6)
    assert not np.array_equal(a.traces["T_a"].values, c.traces["T_a"].values)


def test_simulate_rejects_non_positive_duration():
    with pytest.raises(ConfigurationError):
        simulate(two_room_layout(), 0, 0)


def test_raw_series_invariants(week):
    for tr in week.traces.values():
        assert np.all(np.diff(tr.t) > 0)
        if tr.kind == "door":
            assert set(np.unique(tr.values)) <= {0.0, 1.0}
    assert np.isclose(week.traces["T_hall"].t[1] - week.traces["T_hall"].t[0], 1.0) if "T_hall" in week.traces else True


@pytest.fixture(scope="module")
def month_pair():
    out = {}
    for policy, k in (("closed", 1 / 240), ("open", 1 / 30)):
        out[policy] = simulate(two_room_layout(), 7, 720, SimConfig(door_policy={"D_ab": policy}, k_open=k))
    return out


def test_closed_door_decorrelates_rooms(month_pair):
    s = month_pair["closed"]
    for a, b in (("T_a", "T_b"), ("H_a", "H_b")):
        assert abs(np.corrcoef(s.traces[a].values, s.traces[b].values)[0, 1]) < 0.2


def test_open_door_couples_rooms(month_pair):
    s = month_pair["open"]
    for a, b in (("T_a", "T_b"), ("H_a", "H_b")):
        assert abs(np.corrcoef(s.traces[a].values, s.traces[b].values)[0, 1]) > 0.8


def test_door_process_rate():
    s = simulate(two_room_layout(), 5, 720)
    assert s.transition_count() >= 500


# --------------------------------------------------------------- anomalies

def test_zero_ratio_leaves_series_unchanged(day):
    out, lab = inject_anomalies(day, 1, 0.0)
    for k, tr in day.traces.items():
        assert np.array_equal(out.traces[k].values, tr.values)
    assert lab.fraction() == 0.0


def test_flagged_fraction_near_target(week):
    _, lab = inject_anomalies(week, 43, 0.15)
    assert 0.13 <= lab.fraction() <= 0.17


def test_labels_mark_exactly_the_modified_points(day):
    out, lab = inject_anomalies(day, 9, 0.15)
    for k, tr in day.traces.items():
        changed = out.traces[k].values != tr.values
        assert np.array_equal(changed, lab.flags[k])
        assert np.array_equal(lab.kinds[k] == KIND_CODES["none"], ~lab.flags[k])


def test_doors_are_never_corrupted(day):
    _, lab = inject_anomalies(day, 9, 0.15)
    assert not any(lab.flags[s.id].any() for s in default_layout().sensors if s.kind == "door")


def test_spikes_are_large_and_isolated(day):
    out, lab = inject_anomalies(day, 2, 0.05, kinds=("spike",))
    for k, tr in day.traces.items():
        f = lab.flags[k]
        if not f.any():
            continue
        sigma = np.std(tr.values)
        delta = np.abs(out.traces[k].values - tr.values)[f]
        assert np.all(delta >= 5 * sigma - 1e-9) and np.all(delta <= 10 * sigma + 1e-9)
        assert np.all(lab.kinds[k][f] == KIND_CODES["spike"])


def test_forced_spike_at_known_index():
    t = np.arange(100.0)
    tr = SensorTrace("T", "temperature", "a", t, np.zeros(100))
    add_spike(tr, 40, 7.0)
    assert np.flatnonzero(tr.flag).tolist() == [40]
    assert tr.values[40] == 7.0 and tr.anomaly_kind[40] == KIND_CODES["spike"]


def test_drift_segments_are_contiguous_ramps(day):
    out, lab = inject_anomalies(day, 4, 0.1, kinds=("drift",))
    tr = next(k for k in lab.flags if lab.flags[k].any())
    f = lab.flags[tr]
    edges = np.flatnonzero(np.diff(np.r_[0, f.astype(int), 0]))
    hz = 1.0 / (day.traces[tr].t[1] - day.traces[tr].t[0])
    lengths = (edges[1::2] - edges[::2]) / hz / 60
    assert np.all(lengths >= 2 - 1e-9)
    s, e = edges[0], edges[1]
    bias = out.traces[tr].values[s:e] - day.traces[tr].values[s:e]
    np.testing.assert_allclose(np.diff(bias, 2), 0, atol=1e-9)


def test_unknown_kind_and_bad_ratio(day):
    with pytest.raises(ConfigurationError):
        inject_anomalies(day, 0, 0.1, kinds=("drift", "stuck"))
    with pytest.raises(ConfigurationError):
        inject_anomalies(day, 0, 0.5)
    assert set(ANOMALY_KINDS) == {"drift", "spike"}


# ------------------------------------------------------- smoothing / binning

def test_savgol_preserves_low_order_polynomials():
    x = np.linspace(-2, 2, 101)
    y = 0.5 * x ** 3 - x ** 2 + 3 * x - 1
    np.testing.assert_allclose(smooth_savitzky_golay(y, 11, 3)[5:-5], y[5:-5], atol=1e-9)


def test_savgol_constant_unchanged():
    np.testing.assert_allclose(smooth_savitzky_golay(np.full(40, 2.5)), 2.5, atol=1e-12)


def test_savgol_reduces_noise(rng):
    x = np.linspace(0, 8 * np.pi, 2000)
    noisy = np.sin(x) + rng.normal(scale=0.2, size=x.size)
    assert np.var(smooth_savitzky_golay(noisy, 11, 3) - np.sin(x)) < 0.2 ** 2


def test_savgol_contract():
    with pytest.raises(ValueError):
        smooth_savitzky_golay(np.zeros(50), 10, 3)
    with pytest.raises(DataError):
        smooth_savitzky_golay(np.zeros(5), 11, 3)


def test_downsample_constant():
    t = np.arange(20.0)
    assert downsample(t, np.full(20, 3.0), 10).values.tolist() == [3.0] * 10


def test_downsample_ramp_midpoints():
    t = np.arange(16) * 0.5                   # 2 Hz
    out = downsample(t, t.copy(), 4).values   # 2-s bins hold 4 samples
    np.testing.assert_allclose(out, [0.75, 2.75, 4.75, 6.75])


def test_downsample_state_takes_last_observation():
    t = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    d = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
    assert downsample(t, d, 2, state=True).values.tolist() == [1.0, 0.0]


def test_downsample_short_gap_filled_long_gap_raises():
    t = np.r_[np.arange(0, 10.0), np.arange(14, 20.0)]      # bins 5 and 6 empty
    out = downsample(t, t.copy(), 10).values
    assert out[5] == out[4] == out[6]
    t2 = np.r_[np.arange(0, 10.0), np.arange(20, 30.0)]
    with pytest.raises(GapError) as ei:
        downsample(t2, t2.copy(), 15, sensor_id="T_x")
    assert ei.value.bin_index == 5 and "T_x" in str(ei.value)


def test_downsample_flag_majority():
    t = np.arange(8.0)
    flag = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=bool)
    kinds = flag.astype(np.uint8) * 2
    d = downsample(t, np.zeros(8), 4, flag=flag, anomaly_kind=kinds)
    assert d.flag.tolist() == [True, True, False, True]
    assert d.anomaly_kind.tolist() == [2, 2, 0, 2]


def test_downsample_rejects_slow_or_unsorted():
    with pytest.raises(DataError):
        downsample(np.arange(0, 20.0, 4.0), np.zeros(5), 10)
    with pytest.raises(DataError):
        downsample(np.array([0.0, 2.0, 1.0]), np.zeros(3), 2)


def test_align_and_features_shapes(day):
    lay = default_layout()
    corrupted, _ = inject_anomalies(day, 1, 0.15)
    al = align(corrupted, lay)
    assert al.values.shape == (24 * 3600 // 2, 31)
    feats = build_features(al, Normalizer.fit(al.values))
    assert feats.shape == (len(al), 31, 9) and np.isfinite(feats).all()
    # one-hot block is exact
    onehot = feats[..., 5:]
    assert np.array_equal(onehot.sum(-1), np.ones((len(al), 31)))
    assert set(np.unique(al.labels)) <= {0, 1}


# ------------------------------------------------------------- windowing

@pytest.mark.parametrize("L, n", [(150, 1), (165, 2), (1000, 57)])
def test_window_count_examples(L, n):
    w = make_windows(np.zeros((L, 2, 9)), np.ones((L, 2)), lambda s, T: None)
    assert len(w) == n == window_count(L, 150, 15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.integers(1, 400), st.integers(1, 60))
def test_window_count_formula(L, T, stride):
    if L < T:
        with pytest.raises(DataError):
            make_windows(np.zeros((L, 1, 1)), np.ones((L, 1)), None, T, stride)
        return
    w = make_windows(np.zeros((L, 1, 1)), np.ones((L, 1)), None, T, stride)
    assert len(w) == (L - T) // stride + 1
    assert w.starts[-1] + T <= L


def windows_of(n):
    L = 150 + 15 * (n - 1)
    return make_windows(np.zeros((L, 1, 1)), np.ones((L, 1)), None, timestamps=np.arange(L) * 2.0)


@pytest.mark.parametrize("n, sizes", [(100, (70, 15, 15)), (10, (7, 1, 2))])
def test_split_sizes(n, sizes):
    assert tuple(len(p) for p in chronological_split(windows_of(n))) == sizes


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 300))
def test_split_is_chronological(n):
    parts = [p for p in chronological_split(windows_of(n)) if len(p)]
    for a, b in zip(parts, parts[1:]):
        assert a.window_starts.max() < b.window_starts.min()
    assert sum(len(p) for p in parts) == n


def test_purged_split_has_no_step_overlap():
    tr, va, te = chronological_split(windows_of(200), purge=True)
    assert tr.covered_steps()[1] <= va.covered_steps()[0]
    assert va.covered_steps()[1] <= te.covered_steps()[0]


def test_split_rejects_unsorted():
    w = windows_of(10)
    with pytest.raises(ValueError):
        chronological_split(w.subset(np.arange(10)[::-1]))


def test_tiled_windows_do_not_overlap():
    w = windows_of(50).tiled()
    assert np.all(np.diff(w.starts) >= 150)


def test_window_sample_carries_door_adjacency(day):
    lay = default_layout()
    al = align(day, lay)
    base, bindings = lay.base_graph()
    adj = DoorAdjacency.from_aligned(al, base, bindings)
    w = make_windows(build_features(al), al.labels, adj, timestamps=al.t)
    s = w[3]
    assert s.x.shape == (150, 31, 9) and s.y.shape == (150, 31)
    assert s.window_start == al.t[45] and len(s.adj_seq) == 150
    x, m, y = w.batch([0, 3])
    assert x.shape == (2, 150, 31, 9) and m.shape == (2, 150, 31, 31) and y.shape == (2, 150, 31)
    static = w.batch([3], dynamic=False)[1]
    assert np.all(static[0] == static[0, 0])


# -------------------------------------------------------------- CSV / store

def test_csv_day_round_trip(tmp_path):
    lay = two_room_layout()
    raw, _ = inject_anomalies(simulate(lay, 8, 24), 1, 0.15)
    write_csv(tmp_path, raw)
    back = load_csv(tmp_path, lay, raw.duration_s)
    for k, tr in raw.traces.items():
        b = back.traces[k]
        np.testing.assert_allclose(b.values, tr.values, atol=1e-12, rtol=0)
        assert np.array_equal(b.t, tr.t) and np.array_equal(b.flag, tr.flag)
        assert np.array_equal(b.anomaly_kind, tr.anomaly_kind)
    assert [(e.t, e.door_id, e.state) for e in back.events] == [(e.t, e.door_id, e.state) for e in raw.events]


def test_csv_empty_and_single_row(tmp_path):
    write_csv(tmp_path, RawSeries({}, [], 0.0))
    assert (tmp_path / "readings.csv").read_text() == "timestamp,sensor_id,kind,value,label,anomaly_kind\n"
    assert (tmp_path / "events.csv").read_text() == "timestamp,door_id,state\n"
    assert load_readings(tmp_path / "readings.csv") == {} and load_events(tmp_path / "events.csv") == []
    one = SensorTrace("T", "temperature", "a", np.array([0.1]), np.array([21.123456789012345]))
    write_csv(tmp_path, RawSeries({"T": one}, [], 1.0))
    back = load_readings(tmp_path / "readings.csv")["T"]
    assert back.values[0] == one.values[0] and back.t[0] == 0.1


@pytest.mark.parametrize("row, reason", [("1.0,T,temperature,abc,1,none", "value"),
                                         ("1.0,T,temperature,2.0,7,none", "label"),
                                         ("1.0,T,temperature,2.0", "")])
def test_csv_parse_error_reports_line(tmp_path, row, reason):
    p = tmp_path / "readings.csv"
    p.write_text("timestamp,sensor_id,kind,value,label,anomaly_kind\n"
                 "0.0,T,temperature,2.0,1,none\n" + row + "\n")
    with pytest.raises(CSVParseError) as ei:
        load_readings(p)
    assert ei.value.line == 3


def test_store_round_trip(tmp_path, day):
    lay = default_layout()
    al = align(day, lay)
    base, bindings = lay.base_graph()
    adj = DoorAdjacency.from_aligned(al, base, bindings)
    w = make_windows(build_features(al), al.labels, adj, timestamps=al.t)
    store = store_from_splits(*chronological_split(w), stride=15, sensor_ids=lay.sensor_ids)
    save_store(tmp_path, store)
    back = load_store(tmp_path)
    assert back.counts() == store.counts() and back.sensor_ids == lay.sensor_ids
    for a, b in zip(store.splits(), back.splits()):
        xa, ma, ya = a.batch(range(min(3, len(a))))
        xb, mb, yb = b.batch(range(min(3, len(b))))
        assert np.array_equal(xa, xb) and np.array_equal(ma, mb) and np.array_equal(ya, yb)
    with pytest.raises(DataError):
        load_store(tmp_path / "nope")


def test_purge_skips_past_an_emptied_validation_split():
    # val is fully purged; test must still clear the train span
    ws = make_windows(np.zeros((600, 1, 1)), np.ones((600, 1)), lambda s, n: None, T=100, stride=20)
    tr, va, te = chronological_split(ws, purge=True)
    assert len(va) == 0
    assert te.starts.min() >= tr.starts.max() + 100
