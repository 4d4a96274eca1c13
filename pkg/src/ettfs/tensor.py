"""A small dense tensor with tape-based reverse-mode differentiation.

Only the operations needed to unroll a spiking network through time are
provided. Data lives in a row-major numpy array; differentiable operations
executed while recording is enabled append an entry to the module tape, and
:func:`backward` replays those entries in reverse execution order.

Training runs in float32. Switch the default to float64 (``precision``)
for finite-difference checks.
"""

import contextlib

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

_FLOAT_TYPES = (np.float32, np.float64)
_default_dtype = np.float32


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_TYPES:
        raise ConfigError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the default floating dtype."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tape:
    """Ordered record of differentiable operations.

    Each record holds the output tensor, its input tensors and a
    vector-Jacobian function mapping the output gradient to one gradient
    per input (``None`` where no gradient is needed).
    """

    def __init__(self):
        self.records = []
        self.enabled = True

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, vjp):
        self.records.append((out, inputs, vjp))

    def clear(self):
        self.records.clear()

    def backward(self, loss, retain=False):
        if not isinstance(loss, Tensor):
            raise UsageError("backward() expects a Tensor")
        if loss.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
        if loss._is_leaf:
            if loss.requires_grad:
                _accumulate_leaf(loss, seed)
            return
        pending = {id(loss): seed}
        for out, inputs, vjp in reversed(self.records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    gi = np.broadcast_to(gi, inp.shape)
                if inp._is_leaf:
                    _accumulate_leaf(inp, gi)
                else:
                    key = id(inp)
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
        if not retain:
            self.clear()


def _accumulate_leaf(t, g):
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g


_TAPE = Tape()


def get_tape():
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


def backward(loss, retain=False):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients are added to existing ``.grad`` buffers, never overwritten.
    The tape is cleared afterwards unless ``retain`` is true, in which case
    a second call accumulates the same gradients again.
    """
    _TAPE.backward(loss, retain=retain)


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype.type not in _FLOAT_TYPES:
                arr = arr.astype(_default_dtype)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._is_leaf = True

    # -- basic accessors -------------------------------------------------
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

    @property
    def is_leaf(self):
        return self._is_leaf

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, retain=False):
        backward(self, retain=retain)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return select(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def flatten(self, start=0):
        return reshape(self, self.shape[:start] + (-1,))


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, inputs, vjp):
    out = Tensor(data)
    if _TAPE.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._is_leaf = False
        _TAPE.record(out, inputs, vjp)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` along broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce_pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- elementwise ----------------------------------------------------------

def add(a, b):
    a, b = _coerce_pair(a, b)

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = _coerce_pair(a, b)

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = _coerce_pair(a, b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _result(a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = _coerce_pair(a, b)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _result(a.data / b.data, (a, b), vjp)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    """``a ** exponent`` for a constant real exponent."""
    if isinstance(exponent, Tensor):
        raise UsageError("power() supports constant exponents only")
    p = float(exponent)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _result(out.astype(a.dtype, copy=False), (a,), vjp)


def sqrt(a):
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def heaviside_surrogate(u, derivative, primitive=None):
    """Spike generation: forward ``Theta(u)`` (1 where ``u >= 0``), backward
    ``derivative(u)`` in place of Theta'.

    ``primitive`` replaces Theta in the forward pass when given (smooth
    forward); the backward is then the exact derivative of the forward.
    """
    if primitive is None:
        out = (u.data >= 0).astype(u.dtype)
    else:
        out = np.asarray(primitive(u.data), dtype=u.dtype)

    def vjp(g):
        return (g * derivative(u.data).astype(u.dtype, copy=False),)

    return _result(out, (u,), vjp)


# -- reductions and shape ops ----------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), vjp)


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def select(a, index):
    """``a[index]`` for an integer index along the leading axis."""
    if not isinstance(index, (int, np.integer)):
        raise UsageError("only integer indexing along axis 0 is differentiable")
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(out, (a,), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) if t.requires_grad else None
                     for i, t in enumerate(tensors))

    return _result(out, tuple(tensors), vjp)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    """2-D matrix product ``a @ b``."""
    a, b = _coerce_pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _result(a.data @ b.data, (a, b), vjp)


def conv_output_size(size, kernel, stride, padding=0):
    span = size + 2 * padding - kernel
    if span < 0 or stride < 1:
        return 0
    return span // stride + 1


def conv2d(x, w, stride=1, padding=0):
    """Valid cross-correlation of ``x[B,C,H,W]`` with ``w[O,C,kh,kw]``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    if Ho <= 0 or Wo <= 0:
        raise ConfigError(
            f"conv2d output would be empty: input {H}x{W}, kernel {kh}x{kw}, stride {stride}")
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros(xd.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw

    return _result(np.ascontiguousarray(out), (x, w), vjp)


def _pool_windows(x, size):
    if x.ndim != 4:
        raise ShapeError(f"pooling expects [N,C,H,W], got {x.shape}")
    N, C, H, W = x.shape
    if size < 1 or H % size or W % size:
        raise ShapeError(f"pool size {size} does not divide spatial shape {H}x{W}")
    return x.data.reshape(N, C, H // size, size, W // size, size)


def avg_pool2d(x, size):
    win = _pool_windows(x, size)
    out = win.mean(axis=(3, 5))

    def vjp(g):
        g = np.broadcast_to(g[:, :, :, None, :, None] / (size * size), win.shape)
        return (g.reshape(x.shape),)

    return _result(out.astype(x.dtype, copy=False), (x,), vjp)


def max_pool2d(x, size):
    win = _pool_windows(x, size)
    N, C, Ho, _, Wo, _ = win.shape
    flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, size * size)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(N, C, Ho, Wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(x.shape),)

    return _result(out, (x,), vjp)


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), vjp)
