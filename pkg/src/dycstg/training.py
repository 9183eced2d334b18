"""Focal-loss training with AdamW and cosine annealing, evaluation and
checkpoint persistence."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data.preprocess import WindowSet
from .metrics import MetricError, MetricsReport, calibrate_threshold, compute_metrics
from .model import ConfigError, ModelConfig, ModelParams, forward, init_params
from .numerics import Tensor

log = logging.getLogger(__name__)
SCORE_CLAMP = 1e-7


class NumericAbort(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch} (lr={lr:.3g})")
        self.epoch, self.batch, self.lr = epoch, batch, lr


# ----------------------------------------------------------------- objective

def focal_loss(scores, labels, alpha: float = 0.75, gamma: float = 2.0) -> Tensor:
    """Mean focal loss; ``alpha`` weights label-1 (trustworthy) points."""
    p = nx.as_tensor(scores)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise nx.DimensionError(f"scores {p.shape} vs labels {y.shape}")
    p = nx.clip(p, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    one_minus = 1.0 - p
    pos = alpha * (one_minus ** gamma) * nx.log(p) if gamma else alpha * nx.log(p)
    neg = (1.0 - alpha) * (p ** gamma) * nx.log(one_minus) if gamma else (1.0 - alpha) * nx.log(one_minus)
    per_point = -(pos * y + neg * (1.0 - y))
    return nx.reduce_mean(per_point)


# ----------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamState,
               lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place AdamW update with bias correction and decoupled weight decay."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} does not match parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def cosine_anneal(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    if step < 0:
        raise ValueError("step must be non-negative")
    if step > total_steps:
        warnings.warn(f"step {step} beyond schedule length {total_steps}; clamped", RuntimeWarning)
        step = total_steps
    return max(0.0, lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0)


# ----------------------------------------------------------------- config

@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    focal_alpha: float = 0.75
    focal_gamma: float = 2.0
    d_model: int = 128
    heads: int = 4
    g_layers: int = 2
    t_layers: int = 2
    seed: int = 0
    use_dynamic_graph: bool = True
    use_gat: bool = True
    use_encoder: bool = True
    use_causal: bool = True
    dropout: float = 0.1
    causal_layers: int = 1
    # compute caps: None means a full pass
    max_batches_per_epoch: int | None = None
    val_windows: int | None = None
    micro_batch: int | None = None
    precision: str = "float64"

    def __post_init__(self) -> None:
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ConfigError(f"focal_alpha must lie in (0, 1), got {self.focal_alpha}")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        for name in ("max_batches_per_epoch", "val_windows", "micro_batch"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive or null")
        self.model_config()   # validates architecture settings

    def model_config(self, d_in: int = 9) -> ModelConfig:
        return ModelConfig(d_in=d_in, d_model=self.d_model, heads=self.heads, g_layers=self.g_layers,
                           t_layers=self.t_layers, causal_layers=self.causal_layers,
                           dropout=self.dropout, use_dynamic_graph=self.use_dynamic_graph,
                           use_gat=self.use_gat, use_encoder=self.use_encoder, use_causal=self.use_causal)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, strict: bool = False) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if strict and unknown:
            raise ConfigError(f"unknown training settings {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**self.to_dict(), **kw})


# ----------------------------------------------------------------- loops

def _grads(params: ModelParams) -> dict[str, np.ndarray | None]:
    return {k: t.grad for k, t in params}


def predict(params: ModelParams, windows: WindowSet, batch_size: int = 8) -> np.ndarray:
    """Credibility scores ``(n_windows, T, N)`` in inference mode."""
    out = []
    dynamic = params.config.use_dynamic_graph
    with nx.no_grad(), nx.precision(params["embed.w"].data.dtype):
        for lo in range(0, len(windows), batch_size):
            idx = range(lo, min(lo + batch_size, len(windows)))
            x, m, _ = windows.batch(idx, dynamic=dynamic)
            out.append(forward(params, x, m, training=False).data[..., 0])
    if not out:
        return np.empty((0, windows.T, windows.features.shape[1]))
    return np.concatenate(out)


def window_labels(windows: WindowSet) -> np.ndarray:
    return np.stack([windows.labels[s:s + windows.T] for s in windows.starts]) if len(windows) else \
        np.empty((0, windows.T, windows.labels.shape[1]))


def evaluate(params: ModelParams, windows: WindowSet, zeta: float, batch_size: int = 8) -> MetricsReport:
    return compute_metrics(predict(params, windows, batch_size), window_labels(windows), zeta)


def spaced_subset(windows: WindowSet, k: int | None) -> WindowSet:
    """``k`` evenly spaced windows (all when ``k`` is None or large)."""
    if k is None or k >= len(windows):
        return windows
    return windows.subset(np.unique(np.linspace(0, len(windows) - 1, k).round().astype(np.int64)))


@dataclass
class TrainResult:
    params: ModelParams
    threshold: float
    history: list[dict]
    best_epoch: int
    config: TrainConfig


def train(train_windows: WindowSet, val_windows: WindowSet, cfg: TrainConfig,
          model_config: ModelConfig | None = None, progress=None) -> TrainResult:
    """Mini-batch training; returns the checkpoint with the best validation F1.

    Each epoch shuffles the training windows with a seeded generator and
    visits at most ``max_batches_per_epoch`` batches. Validation F1 is taken
    at the threshold calibrated on the validation windows themselves.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ValueError("training and validation splits must be non-empty")
    with nx.precision(np.dtype(cfg.precision).type):
        return _train(train_windows, val_windows, cfg, model_config, progress)


def _train(train_windows, val_windows, cfg, model_config, progress) -> TrainResult:
    mcfg = model_config or cfg.model_config(train_windows.features.shape[-1])
    params = init_params(mcfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 1])
    n_batches = math.ceil(len(train_windows) / cfg.batch_size)
    if cfg.max_batches_per_epoch is not None:
        n_batches = min(n_batches, cfg.max_batches_per_epoch)
    total = n_batches * cfg.epochs
    micro = cfg.micro_batch or cfg.batch_size
    val = spaced_subset(val_windows, cfg.val_windows)
    val_y = window_labels(val)
    state = AdamState()
    tensors = {k: t.data for k, t in params}
    history: list[dict] = []
    best = (-1.0, 0, params.state_dict(), 0.5)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_windows))
        losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if len(idx) == 0:
                break
            lr = cosine_anneal(step, total, cfg.lr)
            params.zero_grad()
            batch_loss = 0.0
            for lo in range(0, len(idx), micro):
                part = idx[lo:lo + micro]
                x, m, y = train_windows.batch(part, dynamic=mcfg.use_dynamic_graph)
                scores = forward(params, x, m, training=True, rng=drop_rng)
                loss = focal_loss(scores, y[..., None], cfg.focal_alpha, cfg.focal_gamma) * (len(part) / len(idx))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericAbort(epoch, b, lr, value)
                nx.backward(loss)
                batch_loss += value
            adamw_step(tensors, _grads(params), state, lr, cfg.weight_decay)
            losses.append(batch_loss)
            step += 1
        val_scores = predict(params, val)
        try:
            zeta = calibrate_threshold(val_scores, val_y)
        except MetricError:
            zeta = 0.5
        rep = compute_metrics(val_scores, val_y, zeta)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": cosine_anneal(step, total, cfg.lr),
               "val_f1": rep.f1, "val_auc": rep.auc, "val_threshold": zeta}
        history.append(row)
        log.info("epoch %d loss %.5f val_f1 %.4f", epoch, row["train_loss"], rep.f1)
        if progress:
            progress(row)
        if rep.f1 > best[0]:
            best = (rep.f1, epoch, params.state_dict(), zeta)
    params.load_state_dict(best[2])
    return TrainResult(params, best[3], history, best[1], cfg)


# ----------------------------------------------------------------- checkpoints

def save_checkpoint(path, result: TrainResult) -> None:
    path = Path(path)
    meta = {"model_config": result.params.config.to_dict(), "train_config": result.config.to_dict(),
            "threshold": result.threshold, "best_epoch": result.best_epoch}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **result.params.state_dict())


def load_checkpoint(path) -> tuple[ModelParams, float, TrainConfig]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        mcfg = ModelConfig.from_dict(meta["model_config"])
        with nx.precision(z["embed.w"].dtype.type):
            params = init_params(mcfg, 0)
            params.load_state_dict({k: z[k] for k in z.files if k != "__meta__"})
    return params, float(meta["threshold"]), TrainConfig.from_dict(meta["train_config"])
