"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray; primitive ops record themselves onto the active
GradTape (a Wengert list), and backward() replays the list in reverse,
accumulating gradients into every contributing input.  Tapes are
per-forward-pass: build one, run the forward inside it, call backward once,
throw it away.  With no active tape the same ops run as plain numpy, which is
the inference fast path.

Precision is a construction-time property: ops preserve the dtype of their
inputs, so a float64 graph stays float64 (gradient checks) and a float32
graph stays float32 (training).
"""

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_TAPES = []
_FINITE_CHECKS = True


class DimensionError(ValueError):
    """Raised when operand shapes cannot be reconciled."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf while finite checks are on."""


def set_finite_checks(enabled):
    """Toggle the NaN/Inf check applied to every primitive output.

    Returns the previous setting so callers can restore it.
    """
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


def _check(data, op):
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return data


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype == np.float16:
            raise ValueError("half precision is not supported")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        kind = "param" if self.requires_grad else "const"
        return f"Tensor({kind}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class GradTape:
    """Ordered record of primitive ops from one forward pass.

    backward() walks the record once, in reverse order, so fan-out sums
    naturally via gradient accumulation.  A tape is single use.
    """

    def __init__(self):
        self._ops = []
        self._used = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._ops)

    def backward(self, loss):
        """Seed d(loss)/d(loss)=1 and accumulate grads into every input."""
        if self._used:
            raise RuntimeError("tape already consumed; build a new one per forward pass")
        self._used = True
        if loss.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)
        self._ops = []


def backward(tape, loss):
    tape.backward(loss)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _make(data, op, inputs, backward_fn):
    """Wrap an op result, recording it if a tape is active and grads flow."""
    _check(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._ops.append((out, backward_fn))
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum a gradient over the axes numpy broadcast to reach g's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def add(a, b):
    b = _as_tensor(b, a)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, "add", (a, b), bwd)


def sub(a, b):
    b = _as_tensor(b, a)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _make(a.data - b.data, "sub", (a, b), bwd)


def neg(a):
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, "neg", (a,), bwd)


def mul(a, b):
    b = _as_tensor(b, a)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, "mul", (a, b), bwd)


def matmul(a, b):
    """Matrix product with either a shared 2-D right operand or equal batch dims.

    (..., n, k) @ (k, m) and (B..., n, k) @ (B..., k, m) are the two accepted
    shapes; anything else is a DimensionError.  No broadcasting across batch
    dims, matching how the layers use it.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs 2-D+ operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"inner dims differ: {ad.shape} @ {bd.shape}")
    if bd.ndim != 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"batch dims differ: {ad.shape} @ {bd.shape}")

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(bd, -1, -2)))
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k, m = bd.shape
                gb = np.matmul(ad.reshape(-1, k).T, g.reshape(-1, m))
            else:
                gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            _accum(b, gb)

    return _make(np.matmul(ad, bd), "matmul", (a, b), bwd)


def reshape(a, shape):
    old = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), "reshape", (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), "transpose", (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, "concat", tuple(tensors), bwd)


def index(a, idx):
    # basic slicing only; the scatter in bwd relies on it
    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] += g
            _accum(a, full)

    return _make(a.data[idx].copy(), "index", (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    shape = a.data.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), bwd)


def mean(a, axis=None, keepdims=False):
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape) / n)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), "mean", (a,), bwd)


def softmax(x, axis=-1):
    """Numerically stable softmax: rows sum to 1 regardless of magnitude."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - inner))

    return _make(y, "softmax", (x,), bwd)


def masked_softmax(x, mask, axis=-1):
    """Softmax restricted to positions where mask is True.

    Masked positions get weight exactly 0.  Rows with no unmasked position
    come back all-zero instead of NaN, which is what the attention layer
    wants for fully padded queries.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    neg = np.where(mask, x.data, -np.inf)
    m = neg.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(neg - m)
    # exp(-inf) underflows to exactly 0, but be explicit about it
    e = np.where(mask, e, 0.0)
    s = e.sum(axis=axis, keepdims=True)
    y = e / np.where(s == 0.0, 1.0, s)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - inner))

    return _make(y.astype(x.dtype, copy=False), "masked_softmax", (x,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _make(y, "layer_norm", (x, gain, bias), bwd)


def gelu(x):
    """Exact GELU, x * Phi(x) with the Gaussian CDF via erf."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accum(x, g * (cdf + x.data * pdf))

    return _make(y.astype(x.dtype, copy=False), "gelu", (x,), bwd)


def sigmoid(x):
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(x, g * y * (1.0 - y))

    return _make(y, "sigmoid", (x,), bwd)


def log(x):
    def bwd(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), "log", (x,), bwd)


def exp(x):
    y = np.exp(x.data)

    def bwd(g):
        _accum(x, g * y)

    return _make(y, "exp", (x,), bwd)


def clip(x, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only through the interior."""
    inside = (x.data > lo) & (x.data < hi)

    def bwd(g):
        _accum(x, g * inside)

    return _make(np.clip(x.data, lo, hi), "clip", (x,), bwd)


def embedding(table, ids):
    """Gather rows of a (V, d) table by an integer id array."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DimensionError("token id out of range for embedding table")

    def bwd(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
            _accum(table, gt)

    return _make(table.data[ids].copy(), "embedding", (table,), bwd)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity (and unrecorded) when not training."""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.data.shape) >= rate).astype(x.dtype)
    scale = 1.0 / (1.0 - rate)

    def bwd(g):
        _accum(x, g * keep * scale)

    return _make(x.data * keep * scale, "dropout", (x,), bwd)


def grad_check(f, params, eps=1e-5):
    """Compare tape gradients of f() against central differences.

    f must be a deterministic closure returning a scalar Tensor built from
    `params`.  Every parameter coordinate is perturbed by +-eps in place, so
    run this on float64 parameters or the differences drown in rounding.
    Returns the max relative error over all coordinates, where the error of a
    pair (a, c) is |a - c| / max(|a|, |c|, 1e-8).
    """
    params = list(params)
    with GradTape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = an.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = float(f().data)
            flat[i] = saved - eps
            down = float(f().data)
            flat[i] = saved
            cd = (up - down) / (2.0 * eps)
            a = float(aflat[i])
            rel = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
            if rel > worst:
                worst = rel
    return worst


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place so the global L2 norm is at most max_norm.

    Accepts Tensors (their .grad is clipped) or raw ndarrays.  Returns the
    pre-clip global norm.  The scale is exactly max_norm / norm, so clipping
    an already-clipped set is a no-op up to rounding.
    """
    arrays = []
    for g in grads:
        if isinstance(g, Tensor):
            if g.grad is not None:
                arrays.append(g.grad)
        elif g is not None:
            arrays.append(np.asarray(g))
    total = 0.0
    for a in arrays:
        total += float(np.dot(a.reshape(-1), a.reshape(-1)))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm
