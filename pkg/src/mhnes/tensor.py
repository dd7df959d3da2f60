"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything is float64 and define-by-run: each executed operation appends a
node to the active tape, and ``backward`` walks the tape in reverse from the
loss node. Gradients of ``requires_grad`` leaves accumulate across backward
calls; intermediate gradients are rebuilt fresh on every call.

The engine is single-thread-confined by design (one tape per thread);
independent models on different threads share nothing.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tape machinery


class Node:
    """One executed operation: inputs, output, and a vjp callback.

    ``fn(g)`` receives the gradient w.r.t. the output and returns one gradient
    array (or None) per input, each freshly allocated.
    """

    __slots__ = ("inputs", "fn", "out", "index", "tape", "name")

    def __init__(self, inputs, fn, out, name):
        self.inputs = inputs
        self.fn = fn
        self.out = out
        self.name = name
        self.index = -1
        self.tape = None


class Tape:
    """Ordered record of executed operations.

    Insertion order is topological by construction: an operation can only be
    recorded after the operations producing its inputs. Usable as a context
    manager to scope recording (a fresh tape per training step keeps memory
    bounded).
    """

    def __init__(self):
        self.nodes = []

    def record(self, node):
        node.index = len(self.nodes)
        node.tape = self
        self.nodes.append(node)

    def __enter__(self):
        _state().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state().tapes.pop()
        return False


class _ThreadState(threading.local):
    def __init__(self):
        self.tapes = [Tape()]
        self.grad_enabled = True


_STATE = _ThreadState()


def _state():
    return _STATE


def active_tape():
    return _state().tapes[-1]


def is_grad_enabled():
    return _state().grad_enabled


@contextmanager
def no_grad():
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars only on the right for sub/mul symmetry
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, inputs, fn, name):
    rg = _state().grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    if rg:
        node = Node(tuple(inputs), fn, out, name)
        active_tape().record(node)
        out._node = node
    return out


def backward(loss):
    """Populate gradients of every reachable ``requires_grad`` leaf.

    Walks the loss's tape in reverse; each node is visited at most once.
    Leaf gradients accumulate across calls (callers reset with ``grad=None``).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
        return
    tape = loss._node.tape
    flow = {id(loss): np.ones_like(loss.data)}
    alive = {id(loss): loss}  # keep tensors alive while their id keys exist
    for node in reversed(tape.nodes[: loss._node.index + 1]):
        g = flow.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g
        grads = node.fn(g)
        for t, gt in zip(node.inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if gt.shape != t.data.shape:
                raise ShapeError(
                    f"{node.name}: gradient shape {gt.shape} != input shape {t.data.shape}"
                )
            if t._node is not None and t._node.tape is tape:
                k = id(t)
                flow[k] = gt if k not in flow else flow[k] + gt
                alive[k] = t
            else:
                t.grad = gt if t.grad is None else t.grad + gt


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def _binary_shapes(a, b, op):
    if np.isscalar(b) or (isinstance(b, np.ndarray) and b.ndim == 0):
        return float(b)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return b


def add(a, b):
    a = as_tensor(a)
    b = _binary_shapes(a, b, "add")
    if isinstance(b, float):
        return _record(a.data + b, [a], lambda g: (g.copy(),), "add_scalar")
    return _record(a.data + b.data, [a, b], lambda g: (g.copy(), g.copy()), "add")


def sub(a, b):
    a = as_tensor(a)
    b = _binary_shapes(a, b, "sub")
    if isinstance(b, float):
        return _record(a.data - b, [a], lambda g: (g.copy(),), "sub_scalar")
    return _record(a.data - b.data, [a, b], lambda g: (g.copy(), -g), "sub")


def mul(a, b):
    a = as_tensor(a)
    b = _binary_shapes(a, b, "mul")
    if isinstance(b, float):
        return scale(a, b)
    return _record(
        a.data * b.data, [a, b], lambda g: (g * b.data, g * a.data), "mul"
    )


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    return _record(a.data * s, [a], lambda g: (g * s,), "scale")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _record(
        a.data @ b.data,
        [a, b],
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def linear(x, w, b):
    """x @ w + b with b a length-(out) vector added to every row."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
    return _record(
        x.data @ w.data + b.data,
        [x, w, b],
        lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)),
        "linear",
    )


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), [x], lambda g: (g * mask,), "relu")


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, [x], lambda g: (g * y,), "exp")


def log(x):
    x = as_tensor(x)
    return _record(np.log(x.data), [x], lambda g: (g / x.data,), "log")


def clip_min(x, lo):
    """max(x, lo); gradient is zero where the floor is active."""
    x = as_tensor(x)
    mask = x.data >= lo
    return _record(
        np.maximum(x.data, lo), [x], lambda g: (g * mask,), "clip_min"
    )


# ---------------------------------------------------------------------------
# reductions and shape ops


def reduce_sum(x, axis=None):
    x = as_tensor(x)
    y = x.data.sum(axis=axis)

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return _record(y, [x], fn, "sum")


def reduce_mean(x, axis=None):
    x = as_tensor(x)
    y = x.data.mean(axis=axis)
    n = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in np.atleast_1d(axis)]
    )

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.data.shape).copy(),)
        return (
            np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape).copy(),
        )

    return _record(y, [x], fn, "mean")


def reshape(x, shape):
    x = as_tensor(x)
    old = x.data.shape
    return _record(
        x.data.reshape(shape), [x], lambda g: (g.reshape(old),), "reshape"
    )


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _record(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, fn, "concat"
    )


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    x = as_tensor(x)
    if start < 0 or start + length > x.data.shape[axis]:
        raise ShapeError(
            f"narrow: [{start},{start + length}) out of bounds for axis {axis} "
            f"of shape {x.shape}"
        )
    idx = tuple(
        slice(start, start + length) if a == axis else slice(None)
        for a in range(x.ndim)
    )

    def fn(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _record(x.data[idx].copy(), [x], fn, "narrow")


def pick(x, rows_idx):
    """out[n] = x[n, idx[n]] for a 2-D tensor and integer index vector."""
    x = as_tensor(x)
    idx = np.asarray(rows_idx, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"pick: need [N,C] tensor and [N] index, got {x.shape}")
    if idx.min() < 0 or idx.max() >= x.shape[1]:
        raise IndexError(
            f"pick: index out of range [0,{x.shape[1]}): min={idx.min()} max={idx.max()}"
        )
    rows = np.arange(x.shape[0])

    def fn(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return (full,)

    return _record(x.data[rows, idx].copy(), [x], fn, "pick")


def weighted_sum(tensors, w):
    """sum_i w[i] * tensors[i] for same-shape tensors and a 1-D weight tensor."""
    tensors = [as_tensor(t) for t in tensors]
    w = as_tensor(w)
    if w.ndim != 1 or len(tensors) != w.shape[0]:
        raise ShapeError(
            f"weighted_sum: {len(tensors)} tensors vs weight shape {w.shape}"
        )
    base = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != base:
            raise ShapeError(
                f"weighted_sum: shape mismatch {t.data.shape} vs {base}"
            )
    out = np.zeros(base)
    for wi, t in zip(w.data, tensors):
        out += wi * t.data

    def fn(g):
        gw = np.array([float(np.sum(g * t.data)) for t in tensors])
        return tuple(g * wi for wi in w.data) + (gw,)

    return _record(out, list(tensors) + [w], fn, "weighted_sum")


def softmax(x, axis=-1):
    x = as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} in shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, [x], fn, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ShapeError(f"log_softmax: empty axis {axis} in shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    sm = np.exp(y)

    def fn(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _record(y, [x], fn, "log_softmax")


def channel_shuffle(x, groups):
    """Interleave channel groups of an [N,C,H,W] tensor (C divisible by groups)."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    if c % groups:
        raise ShapeError(f"channel_shuffle: {c} channels not divisible by {groups}")
    if groups == 1:
        return _record(x.data.copy(), [x], lambda g: (g.copy(),), "shuffle")

    def fwd(a):
        return (
            a.reshape(n, groups, c // groups, h, w)
            .swapaxes(1, 2)
            .reshape(n, c, h, w)
        )

    def inv(a):
        return (
            a.reshape(n, c // groups, groups, h, w)
            .swapaxes(1, 2)
            .reshape(n, c, h, w)
        )

    return _record(fwd(x.data).copy(), [x], lambda g: (inv(g).copy(),), "shuffle")


def subsample2(x):
    """Spatial stride-2 subsample of an [N,C,H,W] tensor (parameter-free)."""
    x = as_tensor(x)

    def fn(g):
        full = np.zeros_like(x.data)
        full[:, :, ::2, ::2] = g
        return (full,)

    return _record(x.data[:, :, ::2, ::2].copy(), [x], fn, "subsample2")


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f, tensors, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the given tensors to a scalar Tensor and must be pure. The
    error at each coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    tensors = list(tensors)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape():
        loss = f(*tensors)
        backward(loss)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for t in tensors
    ]

    def value():
        with no_grad():
            return float(f(*tensors).data)

    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
