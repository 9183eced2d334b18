"""Dense tensors with tape-based reverse-mode differentiation.

Arithmetic runs in float64 unless a :func:`precision` block selects float32.

Every op takes and returns :class:`Tensor`. When an input requires a
gradient and recording is enabled, the op appends a record (inputs, output,
backward rule) to the active :class:`Tape`. :func:`backward` replays the
tape in reverse and accumulates gradients on leaf tensors.

Broadcasting follows numpy rules; gradients are summed back to the input
shape.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64
_PRECISION: list = [DTYPE]
MASK_FILL = -1e9
LN_EPS = 1e-5


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Misuse of the recording tape (replayed twice, non-scalar loss...)."""


class Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    A tape is consumed by :func:`backward`; recording onto a consumed tape
    is an error. Call :meth:`reset` to reuse it.
    """

    def __init__(self) -> None:
        self.records: list[Record] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.records)

    def reset(self) -> None:
        self.records = []
        self.consumed = False

    def record(self, inputs, output, backward) -> None:
        if self.consumed:
            raise TapeError("tape already replayed; reset it or open a new one")
        self.records.append(Record(inputs, output, backward))

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)


# Bottom of the stack is the implicit default tape. ``None`` entries disable
# recording (see no_grad).
_TAPES: list[Tape | None] = [Tape()]


def active_tape() -> Tape | None:
    return _TAPES[-1]


def default_tape() -> Tape:
    return _TAPES[0]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording (inference)."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def compute_dtype():
    """Floating dtype new tensors are stored in."""
    return _PRECISION[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Run the enclosed block with tensors stored as ``dtype``."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _PRECISION.append(dtype)
    try:
        yield
    finally:
        _PRECISION.pop()


class Tensor:
    """A dense array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        dt = _PRECISION[-1]
        arr = np.array(data, dtype=dt) if not isinstance(data, np.ndarray) else data
        if arr.dtype != dt:
            arr = arr.astype(dt)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        # tape that produced this tensor; None for leaves and constants
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise TapeError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=_PRECISION[-1]), requires_grad=True)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = _TAPES[-1]
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.record(tuple(inputs), out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad / bd, (a, b), backward)


def power(x, p: float) -> Tensor:
    """Elementwise ``x ** p`` for a constant exponent."""
    x = as_tensor(x)
    xd = x.data
    return _make(xd**p, (x,), lambda g: (g * p * xd ** (p - 1),))


def matmul(a, b) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


# --------------------------------------------------------------- activations

def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    # split by sign so exp never overflows
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    neg = alpha * np.expm1(np.minimum(xd, 0.0))
    out = np.where(xd > 0, xd, neg)
    return _make(out, (x,), lambda g: (g * np.where(xd > 0, 1.0, neg + alpha),))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient is zero where clamping is active."""
    x = as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# ------------------------------------------------------------------- shaping

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x) -> Tensor:
    """Exchange the last two axes."""
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x, index) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _make(np.array(x.data[index]), (x,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise DimensionError(f"concat: shapes {[s.shape for s in ts]} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


# ---------------------------------------------------------------- reductions

def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


# ----------------------------------------------------------- composite layers

def masked_softmax(scores, mask) -> Tensor:
    """Row softmax over the last axis restricted to entries where mask is 1.

    Masked logits are shifted by ``MASK_FILL`` before the softmax and the
    result is multiplied by the mask, so masked weights are exactly zero.
    """
    scores = as_tensor(scores)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=scores.data.dtype)
    try:
        np.broadcast_shapes(scores.shape, m.shape)
    except ValueError:
        raise DimensionError(f"masked_softmax: mask {m.shape} vs scores {scores.shape}") from None
    if np.any(m.sum(axis=-1) == 0):
        raise ValueError("masked_softmax: a query row has every key masked")
    full = bool(m.all())
    z = scores.data.copy() if full else scores.data + (1.0 - m) * MASK_FILL
    z -= z.max(axis=-1, keepdims=True)
    p = np.exp(z, out=z)
    p /= p.sum(axis=-1, keepdims=True)
    if not full:
        p *= m

    def backward(g):
        # p is zero on masked entries, so the Jacobian product ignores them
        gp = g * p
        gp -= p * gp.sum(axis=-1, keepdims=True)
        return (gp,)

    return _make(p, (scores,), backward)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape}/bias {bias.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gx = gh = gb = None
        if x.requires_grad:
            gxh = g * gd
            gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                        - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gh = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gh, gb

    return _make(xhat * gd + bias.data, (x, gain, bias), backward)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout. Identity unless ``training`` and ``p > 0``."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    # 16-bit uniform draws: keep probability is exact to within 2**-16
    bits = rng.integers(0, 65536, size=x.shape, dtype=np.uint16)
    keep = bits >= round(p * 65536)
    scale = 1.0 / (1.0 - p)

    def backward(g):
        out = g * keep
        out *= scale
        return (out,)

    out = x.data * keep
    out *= scale
    return _make(out, (x,), backward)


# ------------------------------------------------------------------ backward

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` buffers. The tape that
    recorded ``loss`` is consumed; a second call raises :class:`TapeError`.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any tensor requiring grad")
    tape = loss._tape
    if tape is None:
        # the loss is itself a leaf
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    if tape.consumed:
        raise TapeError("tape already replayed; run the forward pass again")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if t._tape is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    tape.records = []
    tape.consumed = True
    if tape is _TAPES[0]:
        _TAPES[0] = Tape()


def grad_check(f: Callable[..., Tensor], x, eps: float = 1e-5) -> float:
    """Largest relative disagreement between analytic and central-difference
    gradients of the scalar function ``f`` at ``x``.

    ``x`` is a Tensor or a sequence of Tensors passed positionally to ``f``.
    The error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    base = [t.data.copy() for t in xs]

    with no_grad():
        v0 = f(*[Tensor(b.copy()) for b in base]).data.copy()
        v1 = f(*[Tensor(b.copy()) for b in base]).data.copy()
    if v0.size != 1:
        raise TapeError(f"grad_check needs a scalar function, got shape {v0.shape}")
    if not np.array_equal(v0, v1):
        raise ValueError("grad_check: f is not deterministic (is dropout active?)")

    leaves = [Tensor(b.copy(), requires_grad=True) for b in base]
    with Tape():
        loss = f(*leaves)
        backward(loss)
    analytic = [np.zeros_like(b) if t.grad is None else t.grad for t, b in zip(leaves, base)]

    worst = 0.0
    with no_grad():
        for k, b in enumerate(base):
            flat = b.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(*[Tensor(c.copy()) for c in base]).item()
                flat[i] = orig - eps
                fm = f(*[Tensor(c.copy()) for c in base]).item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                a = analytic[k].reshape(-1)[i]
                worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
