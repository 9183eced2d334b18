"""Gated fusion of the two temporal streams, prediction head and decision rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor


@dataclass
class GateParams:
    w_g: Tensor   # (2D, D)
    b_g: Tensor   # (D,)


@dataclass
class HeadParams:
    w1: Tensor    # (D, D_hidden)
    b1: Tensor
    w2: Tensor    # (D_hidden, 1)
    b2: Tensor


def gate(h_st: Tensor, h_causal: Tensor, params: GateParams) -> Tensor:
    if h_st.shape != h_causal.shape:
        raise DimensionError(f"gated_fuse: {h_st.shape} vs {h_causal.shape}")
    return nx.sigmoid(nx.concat([h_st, h_causal], axis=-1) @ params.w_g + params.b_g)


def gated_fuse(h_st: Tensor, h_causal: Tensor, params: GateParams) -> Tensor:
    """``G * h_st + (1 - G) * h_causal`` with ``G = sigmoid([h_st | h_causal] W_g + b_g)``."""
    g = gate(h_st, h_causal, params)
    # written as h_causal + G*(h_st - h_causal) so equal inputs pass through exactly
    return h_causal + g * (h_st - h_causal)


def predict_scores(h_fused: Tensor, params: HeadParams) -> Tensor:
    """Credibility scores in (0, 1), shape ``[..., 1]``."""
    hidden = nx.elu(h_fused @ params.w1 + params.b1)
    return nx.sigmoid(hidden @ params.w2 + params.b2)


def decide(y, zeta: float) -> np.ndarray:
    """1 (trustworthy) where ``y > zeta``, 0 where ``y <= zeta``."""
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {zeta}")
    arr = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    return (arr > zeta).astype(np.int8)
