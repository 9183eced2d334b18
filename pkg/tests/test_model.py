import numpy as np
import pytest

from dycstg import numerics as nx
from dycstg.model import ConfigError, ModelConfig, forward, init_params


def tiny(**kw):
    return ModelConfig(d_in=3, d_model=8, heads=2, g_layers=1, t_layers=1, dropout=0.0, **kw)


def chain_masks(T, N):
    m = np.eye(N) + np.eye(N, k=1) + np.eye(N, k=-1)
    return np.broadcast_to(m, (T, N, N)).copy()


def test_output_shape_and_range(rng):
    p = init_params(tiny(), seed=0)
    y = forward(p, rng.normal(size=(2, 4, 3, 3)), chain_masks(4, 3))
    assert y.shape == (2, 4, 3, 1)
    assert np.all((y.data > 0) & (y.data < 1))


def test_init_is_seeded():
    a, b = init_params(tiny(), 5), init_params(tiny(), 5)
    assert all(np.array_equal(a[k].data, b[k].data) for k, _ in a)
    c = init_params(tiny(), 6)
    assert not np.array_equal(a["embed.w"].data, c["embed.w"].data)


def test_zero_gate_at_init():
    p = init_params(tiny(), 0)
    assert not p["gate.w"].data.any() and not p["gate.b"].data.any()


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(d_model=7, heads=7)
    with pytest.raises(ConfigError):
        ModelConfig(use_dynamic_graph=False, use_gat=False, use_encoder=False, use_causal=False)
    assert ModelConfig.from_dict({**ModelConfig().to_dict(), "extra": 1}) == ModelConfig()


@pytest.mark.parametrize("flag", ["use_gat", "use_encoder", "use_causal"])
def test_ablated_models_run(rng, flag):
    p = init_params(tiny(**{flag: False}), 0)
    trace = forward(p, rng.normal(size=(1, 3, 3, 3)), chain_masks(3, 3), trace=True)
    assert trace.scores.shape == (1, 3, 3, 1)
    if flag == "use_gat":
        assert trace.h_spatial is trace.h0
    if flag == "use_causal":
        assert trace.h_fused is trace.h_st
    prefix = {"use_gat": "gat0", "use_encoder": "enc", "use_causal": "cau"}[flag]
    assert not any(k.startswith(prefix) for k, _ in p)


def test_state_dict_round_trip(rng):
    p = init_params(tiny(), 0)
    q = init_params(tiny(), 1)
    q.load_state_dict(p.state_dict())
    x = rng.normal(size=(1, 3, 3, 3))
    assert np.array_equal(forward(p, x, chain_masks(3, 3)).data, forward(q, x, chain_masks(3, 3)).data)
    bad = p.state_dict()
    bad["embed.w"] = bad["embed.w"][:, :4]
    with pytest.raises(ValueError):
        q.load_state_dict(bad)


def test_eval_forward_is_deterministic(rng):
    p = init_params(ModelConfig(d_in=3, d_model=8, heads=2, g_layers=1, t_layers=1, dropout=0.3), 0)
    x = rng.normal(size=(1, 4, 2, 3))
    m = chain_masks(4, 2)
    assert forward(p, x, m).data.tobytes() == forward(p, x, m).data.tobytes()
    tr = forward(p, x, m, training=True, rng=np.random.default_rng(0)).data
    assert not np.array_equal(tr, forward(p, x, m).data)


def test_whole_model_gradients(rng):
    p = init_params(ModelConfig(d_in=3, d_model=8, heads=2, g_layers=2, t_layers=1, dropout=0.0), 0)
    # a non-zero gate so gradients reach both temporal streams
    p["gate.w"].data[:] = rng.normal(scale=0.3, size=p["gate.w"].shape)
    x = rng.normal(size=(1, 4, 2, 3))
    m = chain_masks(4, 2)
    m[2] = np.eye(2)
    names = [k for k, _ in p]

    def f(*ts):
        y = forward(p.replaced(dict(zip(names, ts))), x, m)
        return (y * y).sum()
    assert nx.grad_check(f, [t for _, t in p]) <= 1e-6
