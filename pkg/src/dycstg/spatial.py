"""Masked graph attention over per-step snapshots.

Features are laid out ``[B, T, N, D]``; a mask of shape ``[T, N, N]`` (or
``[B, T, N, N]``) broadcasts across the batch so every time step is
attended under its own adjacency. This is the same computation as folding
time into the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": nx.elu,
    "identity": lambda x: x,
}


@dataclass
class GATLayerParams:
    w: Tensor          # (D_in, D_out)
    attn_vec: Tensor   # (2 * D_out,)
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.attn_vec.shape != (2 * self.w.shape[1],):
            raise DimensionError(
                f"attn_vec has shape {self.attn_vec.shape}, expected ({2 * self.w.shape[1]},)")

    def tensors(self) -> list[Tensor]:
        return [self.w, self.attn_vec]


@dataclass
class SpatialStackParams:
    layers: list[GATLayerParams]

    def __post_init__(self) -> None:
        for a, b in zip(self.layers, self.layers[1:]):
            if a.w.shape[1] != b.w.shape[0]:
                raise DimensionError("consecutive GAT layer dims do not chain")


def attention_weights(h: Tensor, mask, params: GATLayerParams) -> tuple[Tensor, Tensor]:
    """Return ``(alpha, Wh)``: masked neighbour weights and projected features."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=nx.compute_dtype())
    n = h.shape[-2]
    if m.shape[-2:] != (n, n):
        raise DimensionError(f"mask {m.shape} does not match {n} nodes in features {h.shape}")
    d = params.w.shape[1]
    wh = h @ params.w
    src = wh @ params.attn_vec[:d].reshape(d, 1)       # [..., N, 1]  scorer on h_i
    dst = wh @ params.attn_vec[d:].reshape(d, 1)       # [..., N, 1]  scorer on h_j
    e = nx.leaky_relu(src + nx.swap_last(dst), params.leaky_slope)
    return nx.masked_softmax(e, m), wh


def gat_layer_forward(h: Tensor, mask, params: GATLayerParams,
                      activation: str = "elu") -> Tensor:
    """One graph attention layer: ``act(sum_j alpha_ij * h_j W)``."""
    alpha, wh = attention_weights(h, mask, params)
    return ACTIVATIONS[activation](alpha @ wh)


def spatial_encode(h0: Tensor, masks, params: SpatialStackParams,
                   activation: str = "elu", residual: bool = True) -> Tensor:
    """Run the GAT stack over every snapshot.

    ``masks`` has shape ``[T, N, N]`` or ``[B, T, N, N]``; ``h0`` is
    ``[B, T, N, D]``. Each layer is applied as ``h + GAT(h)`` when
    ``residual`` is set.
    """
    m = np.asarray(masks, dtype=nx.compute_dtype())
    if m.ndim not in (3, 4) or m.shape[-3] != h0.shape[1]:
        raise DimensionError(f"masks {m.shape} do not match T={h0.shape[1]} of features {h0.shape}")
    if m.ndim == 4 and m.shape[0] != h0.shape[0]:
        raise DimensionError(f"masks batch {m.shape[0]} vs features batch {h0.shape[0]}")
    h = h0
    for layer in params.layers:
        out = gat_layer_forward(h, m, layer, activation)
        h = h + out if residual and out.shape == h.shape else out
    return h
