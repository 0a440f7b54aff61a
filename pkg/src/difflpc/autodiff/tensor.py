"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Primitives are recorded on the active :class:`Tape` as (output, inputs, vjp)
triples. ``Tape.backward`` walks the records newest-first, feeding each
vector-Jacobian product the accumulated output gradient and summing the
results into the inputs, so a tensor used twice receives both contributions.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> tape.backward(y)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import threading

import numpy as np

_local = threading.local()


def _active():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.records = []
        self.branches = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, out, inputs, vjp):
        self.records.append((out, inputs, vjp))

    def note_branch(self, value):
        """Remember a discrete decision (floor index, clip mask) taken in the forward pass."""
        self.branches.append(np.asarray(value).copy())

    def backward(self, loss, seed=None, retain=False):
        """Set ``.grad`` on every leaf that requires it; intermediates too if ``retain``."""
        if loss.size != 1 and seed is None:
            raise ValueError("backward from a non-scalar needs an explicit seed")
        seed = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
        grads = {id(loss): seed}
        seen = {id(loss): loss}
        produced = set()
        for out, inputs, vjp in reversed(self.records):
            produced.add(id(out))
            g = grads.pop(id(out), None) if not retain else grads.get(id(out))
            if g is None:
                continue
            if retain:
                out.grad = g
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                seen[key] = t
                grads[key] = grads[key] + gi if key in grads else gi
        for key, g in grads.items():
            if key not in produced or retain:
                seen[key].grad = g


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

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

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def make(out_data, inputs, vjp) -> Tensor:
    """Wrap a primitive result, recording it when a tape is active and any input needs grad."""
    out = Tensor(out_data)
    tape = _active()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


def note_branch(value):
    tape = _active()
    if tape is not None:
        tape.note_branch(value)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def detach(x) -> Tensor:
    return Tensor(_data(x))


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    ad, bd = _data(a), _data(b)
    return make(ad + bd, (a, b), lambda g: (unbroadcast(g, ad.shape), unbroadcast(g, bd.shape)))


def sub(a, b):
    ad, bd = _data(a), _data(b)
    return make(ad - bd, (a, b), lambda g: (unbroadcast(g, ad.shape), unbroadcast(-g, bd.shape)))


def mul(a, b):
    ad, bd = _data(a), _data(b)
    return make(
        ad * bd, (a, b),
        lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)),
    )


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = ad / bd
    return make(
        out, (a, b),
        lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)),
    )


def matmul(a, b):
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading axes."""
    ad, bd = _data(a), _data(b)
    if bd.ndim != 2 or ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    def vjp(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make(ad @ bd, (a, b), vjp)


def affine(x, W, b):
    """x @ W + b over the last axis of ``x``."""
    xd, Wd, bd = _data(x), _data(W), _data(b)
    if xd.shape[-1] != Wd.shape[0] or bd.shape != (Wd.shape[1],):
        raise ValueError(f"affine shape mismatch x{xd.shape} W{Wd.shape} b{bd.shape}")

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        return g @ Wd.T, xd.reshape(-1, xd.shape[-1]).T @ g2, g2.sum(axis=0)

    return make(xd @ Wd + bd, (x, W, b), vjp)


# -- elementwise --------------------------------------------------------------

def tanh(x):
    out = np.tanh(_data(x))
    return make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    xd = _data(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return make(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    out = np.exp(_data(x))
    return make(out, (x,), lambda g: (g * out,))


def log(x, floor: float = 0.0):
    """Natural log; values below ``floor`` are clamped (zero gradient there).

    NaN inputs stay NaN so that a broken forward pass is not hidden by the floor.
    """
    xd = _data(x)
    if floor > 0.0:
        mask = xd > floor
        note_branch(mask)
        safe = np.where(mask | np.isnan(xd), xd, floor)
        return make(np.log(safe), (x,), lambda g: (np.where(mask, g / safe, 0.0),))
    return make(np.log(xd), (x,), lambda g: (g / xd,))


def absolute(x):
    xd = _data(x)
    sign = np.sign(xd)
    note_branch(sign)
    return make(np.abs(xd), (x,), lambda g: (g * sign,))


def clip(x, lo: float, hi: float):
    xd = _data(x)
    mask = (xd >= lo) & (xd <= hi)
    note_branch(mask)
    return make(np.clip(xd, lo, hi), (x,), lambda g: (np.where(mask, g, 0.0),))


def square(x):
    xd = _data(x)
    return make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


# -- reductions and shape -----------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    xd = _data(x)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape).copy(),)

    return make(np.sum(xd, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    xd = _data(x)
    n = xd.size if axis is None else np.prod([xd.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    xd = _data(x)
    return make(xd.reshape(shape), (x,), lambda g: (g.reshape(xd.shape),))


def getitem(x, index):
    xd = _data(x)

    idx = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in idx)

    def vjp(g):
        out = np.zeros_like(xd)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make(xd[index], (x,), vjp)


def concat(tensors, axis=-1):
    datas = [_data(t) for t in tensors]
    axis = axis % datas[0].ndim
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(np.concatenate(datas, axis=axis), tuple(tensors), vjp)


def repeat(x, repeats: int, axis: int):
    """np.repeat along ``axis``; gradients sum back over each block."""
    xd = _data(x)
    axis = axis % xd.ndim

    def vjp(g):
        shape = xd.shape[:axis] + (xd.shape[axis], repeats) + xd.shape[axis + 1 :]
        return (g.reshape(shape).sum(axis=axis + 1),)

    return make(np.repeat(xd, repeats, axis=axis), (x,), vjp)


# -- probability --------------------------------------------------------------

def softmax(x, axis=-1):
    xd = _data(x)
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), vjp)


def pick(probs, index):
    """probs[..., index[...]] for integer class indices (no gradient to the index)."""
    pd = _data(probs)
    idx = np.asarray(index, dtype=np.int64)
    note_branch(idx)

    def vjp(g):
        out = np.zeros_like(pd)
        np.put_along_axis(out, idx[..., None], g[..., None], axis=-1)
        return (out,)

    return make(np.take_along_axis(pd, idx[..., None], axis=-1)[..., 0], (probs,), vjp)


def interp_pick(probs, position, offset: int = 0):
    """Linear interpolation of ``probs`` along the last axis at real ``position``.

    Class c sits at position c - offset. With lo = floor(position), f = position - lo:
    (1 - f) * probs[lo] + f * probs[lo + 1]; the gradient reaches ``position``
    through f. The top class is reachable only with f = 0.
    """
    pd = _data(probs)
    xd = _data(position)
    n = pd.shape[-1]
    if np.any(xd < -offset) or np.any(xd > n - 1 - offset):
        raise ValueError(f"interpolation position outside [{-offset}, {n - 1 - offset}]")
    lo = np.clip(np.floor(xd), -offset, n - 2 - offset)
    frac = xd - lo
    note_branch(lo)
    lo_idx = (lo + offset).astype(np.int64)[..., None]
    p_lo = np.take_along_axis(pd, lo_idx, axis=-1)[..., 0]
    p_hi = np.take_along_axis(pd, lo_idx + 1, axis=-1)[..., 0]

    def vjp(g):
        gp = np.zeros_like(pd)
        np.put_along_axis(gp, lo_idx, (g * (1.0 - frac))[..., None], axis=-1)
        np.put_along_axis(gp, lo_idx + 1, (g * frac)[..., None], axis=-1)
        return gp, g * (p_hi - p_lo)

    return make((1.0 - frac) * p_lo + frac * p_hi, (probs, position), vjp)
