"""Full model: embedding -> GAT stack -> bidirectional encoder -> causal
refinement -> gated fusion -> prediction head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import numerics as nx
from .fusion import GateParams, HeadParams, gated_fuse, predict_scores
from .numerics import Tensor
from .spatial import GATLayerParams, SpatialStackParams, spatial_encode
from .temporal import (EncoderLayerParams, build_temporal_mask, causal_refine, encoder_forward,
                       positional_encoding)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_in: int = 9
    d_model: int = 128
    heads: int = 4
    g_layers: int = 2
    t_layers: int = 2
    causal_layers: int = 1
    causal_ffn: bool = True
    dropout: float = 0.1
    leaky_slope: float = 0.2
    gat_activation: str = "elu"
    use_dynamic_graph: bool = True
    use_gat: bool = True
    use_encoder: bool = True
    use_causal: bool = True

    def __post_init__(self) -> None:
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even")
        if not (self.use_dynamic_graph or self.use_gat or self.use_encoder or self.use_causal):
            raise ConfigError("every model component is disabled")
        if min(self.d_in, self.d_model, self.heads) < 1 or min(self.g_layers, self.t_layers,
                                                              self.causal_layers) < 0:
            raise ConfigError("non-positive model dimension")

    @property
    def d_hidden(self) -> int:
        return self.d_model // 2

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Named learnable tensors plus structured views used by the forward pass."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} vs {t.shape}")
            t.data = np.array(state[k], dtype=nx.compute_dtype())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: nx.parameter(t.data.copy()) for k, t in self.tensors.items()})

    def replaced(self, overrides: dict[str, Tensor]) -> "ModelParams":
        """Same structure with some tensors swapped (used by gradient checks)."""
        return ModelParams(self.config, {**self.tensors, **overrides})

    # structured views --------------------------------------------------------
    def spatial(self) -> SpatialStackParams:
        c = self.config
        return SpatialStackParams([GATLayerParams(self[f"gat{l}.w"], self[f"gat{l}.a"], c.leaky_slope)
                                   for l in range(c.g_layers)])

    def _encoder(self, prefix: str, n: int, ffn: bool) -> list[EncoderLayerParams]:
        out = []
        for l in range(n):
            p = f"{prefix}{l}."
            extra = {}
            if ffn:
                extra = dict(ff_w1=self[p + "ff_w1"], ff_b1=self[p + "ff_b1"], ff_w2=self[p + "ff_w2"],
                             ff_b2=self[p + "ff_b2"], ln2_g=self[p + "ln2_g"], ln2_b=self[p + "ln2_b"])
            out.append(EncoderLayerParams(self.config.heads, self[p + "wq"], self[p + "wk"], self[p + "wv"],
                                          self[p + "wo"], self[p + "bo"], self[p + "ln1_g"],
                                          self[p + "ln1_b"], **extra))
        return out

    def encoder(self) -> list[EncoderLayerParams]:
        return self._encoder("enc", self.config.t_layers, True)

    def causal(self) -> list[EncoderLayerParams]:
        return self._encoder("cau", self.config.causal_layers, self.config.causal_ffn)

    def gate(self) -> GateParams:
        return GateParams(self["gate.w"], self["gate.b"])

    def head(self) -> HeadParams:
        return HeadParams(self["head.w1"], self["head.b1"], self["head.w2"], self["head.b2"])


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Xavier-uniform weights, zero biases, unit layer-norm gains, zero gate."""
    rng = np.random.default_rng(seed)
    d, c = config.d_model, config
    t: dict[str, np.ndarray] = {
        "embed.w": _xavier(rng, c.d_in, d),
        "embed.b": np.zeros(d),
    }
    # disabled components get no tensors, so ablated runs carry no dead weights
    for l in range(c.g_layers if c.use_gat else 0):
        t[f"gat{l}.w"] = _xavier(rng, d, d)
        t[f"gat{l}.a"] = _xavier(rng, 2 * d, 1, shape=(2 * d,))

    def enc(prefix: str, n: int, ffn: bool) -> None:
        for l in range(n):
            p = f"{prefix}{l}."
            for name in ("wq", "wk", "wv", "wo"):
                t[p + name] = _xavier(rng, d, d)
            t[p + "bo"] = np.zeros(d)
            t[p + "ln1_g"], t[p + "ln1_b"] = np.ones(d), np.zeros(d)
            if ffn:
                t[p + "ff_w1"], t[p + "ff_b1"] = _xavier(rng, d, 4 * d), np.zeros(4 * d)
                t[p + "ff_w2"], t[p + "ff_b2"] = _xavier(rng, 4 * d, d), np.zeros(d)
                t[p + "ln2_g"], t[p + "ln2_b"] = np.ones(d), np.zeros(d)

    enc("enc", c.t_layers if c.use_encoder else 0, True)
    if c.use_causal:
        enc("cau", c.causal_layers, c.causal_ffn)
        t["gate.w"], t["gate.b"] = np.zeros((2 * d, d)), np.zeros(d)
    t["head.w1"], t["head.b1"] = _xavier(rng, d, c.d_hidden), np.zeros(c.d_hidden)
    t["head.w2"], t["head.b2"] = _xavier(rng, c.d_hidden, 1), np.zeros(1)
    return ModelParams(config, {k: nx.parameter(v) for k, v in t.items()})


@dataclass
class ForwardTrace:
    h0: Tensor
    h_spatial: Tensor
    h_st: Tensor
    h_causal: Tensor
    h_fused: Tensor
    scores: Tensor


def forward(params: ModelParams, x, masks, training: bool = False,
            rng: np.random.Generator | None = None, trace: bool = False):
    """Credibility scores ``[B, T, N, 1]`` for features ``x`` of shape
    ``[B, T, N, D_in]`` under neighbour masks ``[T, N, N]`` or ``[B, T, N, N]``.

    Ablation switches in the config remove components; the dynamic-graph
    switch is applied by the caller when choosing ``masks``.
    """
    c = params.config
    x = nx.as_tensor(x)
    drop = c.dropout if training else 0.0
    h0 = x @ params["embed.w"] + params["embed.b"]
    h_sp = spatial_encode(h0, masks, params.spatial(), c.gat_activation) if c.use_gat else h0
    T = x.shape[1]
    if c.use_encoder:
        h_st = encoder_forward(h_sp, params.encoder(), build_temporal_mask("bidirectional", T),
                               add_positional=True, training=training, dropout=drop, rng=rng)
    else:
        # positional information still enters once, ahead of the causal stack
        h_st = h_sp + positional_encoding(T, c.d_model)[:, None, :]
    if c.use_causal:
        h_ca = causal_refine(h_st, params.causal(), training=training, dropout=drop, rng=rng)
        h_fu = gated_fuse(h_st, h_ca, params.gate())
    else:
        h_ca, h_fu = h_st, h_st
    y = predict_scores(h_fu, params.head())
    if trace:
        return ForwardTrace(h0, h_sp, h_st, h_ca, h_fu, y)
    return y

