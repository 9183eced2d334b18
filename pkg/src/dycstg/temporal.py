"""Per-node temporal self-attention: bidirectional encoder and causal refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor


@dataclass
class TemporalMask:
    kind: str
    T: int
    matrix: np.ndarray


def build_temporal_mask(kind: str, T: int) -> TemporalMask:
    if T < 1:
        raise ValueError("temporal mask needs T >= 1")
    if kind == "bidirectional":
        m = np.ones((T, T))
    elif kind == "causal":
        m = np.tril(np.ones((T, T)))
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return TemporalMask(kind, T, m)


def positional_encoding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table of shape ``(T, d)``."""
    pos = np.arange(T)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


@dataclass
class EncoderLayerParams:
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    # feed-forward sublayer; all None for an attention-only layer
    ff_w1: Tensor | None = None
    ff_b1: Tensor | None = None
    ff_w2: Tensor | None = None
    ff_b2: Tensor | None = None
    ln2_g: Tensor | None = None
    ln2_b: Tensor | None = None

    def __post_init__(self) -> None:
        d = self.wq.shape[0]
        if d % self.heads:
            raise DimensionError(f"d_model={d} is not divisible by heads={self.heads}")

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @property
    def has_ffn(self) -> bool:
        return self.ff_w1 is not None


def _split_heads(x: Tensor, heads: int) -> Tensor:
    s, t, d = x.shape
    return x.reshape(s, t, heads, d // heads).transpose(0, 2, 1, 3)


def multi_head_attention(x: Tensor, p: EncoderLayerParams, mask: np.ndarray,
                         training: bool = False, dropout: float = 0.0,
                         rng: np.random.Generator | None = None) -> Tensor:
    """Masked multi-head self-attention on ``[S, T, D]`` sequences."""
    s, t, d = x.shape
    dh = d // p.heads
    q = _split_heads(x @ p.wq, p.heads)
    k = _split_heads(x @ p.wk, p.heads)
    v = _split_heads(x @ p.wv, p.heads)
    scores = (q @ nx.swap_last(k)) * (1.0 / float(np.sqrt(dh)))
    attn = nx.masked_softmax(scores, mask)
    attn = nx.dropout(attn, dropout, rng, training)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(s, t, d)
    return ctx @ p.wo + p.bo


def encoder_layer(x: Tensor, p: EncoderLayerParams, mask: np.ndarray,
                  training: bool = False, dropout: float = 0.0,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Pre-norm block: ``x + MHA(LN(x))`` then ``x + FFN(LN(x))``."""
    x = x + multi_head_attention(nx.layer_norm(x, p.ln1_g, p.ln1_b), p, mask, training, dropout, rng)
    if p.has_ffn:
        hdn = nx.elu(nx.layer_norm(x, p.ln2_g, p.ln2_b) @ p.ff_w1 + p.ff_b1)
        hdn = nx.dropout(hdn, dropout, rng, training)
        x = x + (hdn @ p.ff_w2 + p.ff_b2)
    return x


def encoder_forward(h: Tensor, layers: list[EncoderLayerParams], mask: TemporalMask,
                    add_positional: bool = True, training: bool = False,
                    dropout: float = 0.1, rng: np.random.Generator | None = None) -> Tensor:
    """Attend along time for each of the ``B*N`` node series in ``[B, T, N, D]``."""
    if h.ndim != 4:
        raise DimensionError(f"expected [B, T, N, D] features, got {h.shape}")
    b, t, n, d = h.shape
    if mask.T != t:
        raise DimensionError(f"mask length {mask.T} does not match T={t}")
    for p in layers:
        if p.d_model != d:
            raise DimensionError(f"layer d_model {p.d_model} does not match features {d}")
    x = h.transpose(0, 2, 1, 3).reshape(b * n, t, d)
    if add_positional:
        x = x + positional_encoding(t, d)
    for p in layers:
        x = encoder_layer(x, p, mask.matrix, training, dropout, rng)
    return x.reshape(b, n, t, d).transpose(0, 2, 1, 3)


def temporal_encode(h_spatial: Tensor, layers: list[EncoderLayerParams], **kw) -> Tensor:
    """Bidirectional encoder output (the spatio-temporal representation)."""
    return encoder_forward(h_spatial, layers, build_temporal_mask("bidirectional", h_spatial.shape[1]),
                           add_positional=kw.pop("add_positional", True), **kw)


def causal_refine(h_st: Tensor, layers: list[EncoderLayerParams], **kw) -> Tensor:
    """Causally masked self-attention over the encoder output.

    Step ``t`` sees only steps ``0..t``; positional encoding is not re-added.
    """
    return encoder_forward(h_st, layers, build_temporal_mask("causal", h_st.shape[1]),
                           add_positional=kw.pop("add_positional", False), **kw)
