"""Reverse-mode automatic differentiation over float64 numpy arrays.

A deliberately small tape: every operation the completion network needs,
nothing more. Values are plain ``numpy`` arrays, gradients are accumulated
by walking the recorded graph backwards. Running under :func:`no_grad`
skips graph construction entirely, so evaluation-time forwards cost the
same as raw numpy.

Determinism: all operations are single numpy calls with a fixed reduction
order, so identical inputs and parameters produce bitwise-identical
outputs and gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import special as _special

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """An array with an optional backward closure.

    ``_pulls`` is a list of ``(parent, fn)`` pairs where ``fn`` maps the
    upstream gradient to this parent's gradient contribution. Constants
    (no tracked ancestry) carry an empty list and are skipped entirely
    during backward passes.
    """

    __slots__ = ("value", "grad", "is_param", "_pulls")

    def __init__(self, value, pulls=None, is_param=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.is_param = is_param
        self._pulls = pulls or []

    # -- bookkeeping ----------------------------------------------------

    @property
    def tracked(self):
        return self.is_param or bool(self._pulls)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self):
        return float(self.value)

    def detach(self):
        """A view of the value with no gradient ancestry."""
        return Tensor(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

    # -- operators --------------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- backward ---------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() without seed requires a scalar")
            seed = np.ones_like(self.value)
        order = _toposort(self)
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in order:
            g = node.grad
            for parent, fn in node._pulls:
                contribution = fn(g)
                if parent.grad is None:
                    parent.grad = contribution
                else:
                    parent.grad = parent.grad + contribution


def _toposort(root):
    """Reverse topological order of tracked nodes reachable from root."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._pulls:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


# -- construction ---------------------------------------------------------


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value):
    """A leaf tensor that collects gradients."""
    return Tensor(np.array(value, dtype=np.float64), is_param=True)


def _build(value, *pulls):
    """Create the result tensor, keeping only pulls into tracked parents."""
    if not _GRAD_ENABLED:
        return Tensor(value)
    live = [(t, fn) for t, fn in pulls if t.tracked]
    return Tensor(value, live if live else None)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.value - b.value,
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.value * b.value,
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _build(
        a.value / b.value,
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
    )


def power(a, exponent):
    a = as_tensor(a)
    e = float(exponent)
    out = a.value**e
    return _build(out, (a, lambda g: g * e * a.value ** (e - 1.0)))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _build(out, (a, lambda g: g * out))


def log(a):
    a = as_tensor(a)
    return _build(np.log(a.value), (a, lambda g: g / a.value))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _build(out, (a, lambda g: g * (0.5 / out)))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _build(out, (a, lambda g: g * (1.0 - out * out)))


def erf(a):
    a = as_tensor(a)
    out = _special.erf(a.value)
    c = 2.0 / np.sqrt(np.pi)
    return _build(out, (a, lambda g: g * c * np.exp(-a.value * a.value)))


def sigmoid(a):
    a = as_tensor(a)
    out = _special.expit(a.value)
    return _build(out, (a, lambda g: g * out * (1.0 - out)))


def clip(a, lo=None, hi=None):
    """Clamp values; gradient passes through wherever the input is kept."""
    a = as_tensor(a)
    out = np.clip(a.value, lo, hi)
    inside = np.ones_like(a.value)
    if lo is not None:
        inside = inside * (a.value >= lo)
    if hi is not None:
        inside = inside * (a.value <= hi)
    return _build(out, (a, lambda g: g * inside))


def grad_reverse(a, eta):
    """Identity forward; backward multiplies the gradient by ``-eta``."""
    a = as_tensor(a)
    eta = float(eta)
    return _build(a.value.copy(), (a, lambda g: g * (-eta)))


# -- shape manipulation ------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    old = a.value.shape
    return _build(a.value.reshape(shape), (a, lambda g: g.reshape(old)))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _build(np.transpose(a.value, axes), (a, lambda g: np.transpose(g, inverse)))


def swap_last(a):
    """Transpose the trailing two axes (matmul helper)."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, key):
    a = as_tensor(a)

    def pull(g):
        z = np.zeros_like(a.value)
        z[key] = g
        return z

    return _build(a.value[key], (a, pull))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([t.value for t in tensors], axis=axis)

    def make_pull(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _build(out, *[(t, make_pull(i)) for i, t in enumerate(tensors)])


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def make_pull(i):
        return lambda g: np.take(g, i, axis=axis)

    return _build(out, *[(t, make_pull(i)) for i, t in enumerate(tensors)])


# -- indexing / gathering ----------------------------------------------------


def take_rows(a, idx):
    """Gather along axis 0: ``out = a[idx]`` for an integer index array."""
    a = as_tensor(a)
    idx = np.asarray(idx)

    def pull(g):
        z = np.zeros_like(a.value)
        np.add.at(z, idx, g)
        return z

    return _build(a.value[idx], (a, pull))


def take_pairs(a, idx):
    """Batched gather: ``out[b, ...] = a[b, idx[b, ...]]``.

    ``a`` has shape (B, n, *F); ``idx`` is integer (B, *S); the result has
    shape (B, *S, *F).
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    b = a.value.shape[0]
    batch = np.arange(b).reshape((b,) + (1,) * (idx.ndim - 1))

    def pull(g):
        z = np.zeros_like(a.value)
        np.add.at(z, (np.broadcast_to(batch, idx.shape), idx), g)
        return z

    return _build(a.value[batch, idx], (a, pull))


# -- reductions ---------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.asarray(g).reshape((1,) * len(shape)), shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)
    shape = a.value.shape
    # the broadcast view is safe: gradients are only ever read or re-bound
    return _build(out, (a, lambda g: _expand_reduced(g, shape, axis, keepdims)))


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    shape = a.value.shape
    count = a.value.size / out.size
    return _build(
        out, (a, lambda g: _expand_reduced(g, shape, axis, keepdims) / count)
    )


def _extreme(a, axis, keepdims, argfn):
    """Shared max/min with gradient routed to the first extremal entry."""
    a = as_tensor(a)
    if axis is None:
        flat_idx = argfn(a.value)
        out = a.value.reshape(-1)[flat_idx]
        if keepdims:
            out = np.asarray(out).reshape((1,) * a.value.ndim)

        def pull(g):
            z = np.zeros_like(a.value)
            z.reshape(-1)[flat_idx] = np.asarray(g).reshape(-1)[0]
            return z

        return _build(np.asarray(out), (a, pull))

    idx = argfn(a.value, axis=axis)
    out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def pull(g):
        z = np.zeros_like(a.value)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(z, np.expand_dims(idx, axis), gk, axis=axis)
        return z

    return _build(out, (a, pull))


def max_(a, axis=None, keepdims=False):
    return _extreme(a, axis, keepdims, np.argmax)


def min_(a, axis=None, keepdims=False):
    return _extreme(a, axis, keepdims, np.argmin)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def pull(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - inner)

    return _build(out, (a, pull))


# -- linear algebra ------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value @ b.value

    def pull_a(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        return _unbroadcast(ga, a.value.shape)

    def pull_b(g):
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(gb, b.value.shape)

    return _build(out, (a, pull_a), (b, pull_b))


# -- activations ----------------------------------------------------------------


_SQRT2 = np.sqrt(2.0)


def gelu(a):
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    return mul(mul(a, 0.5), add(erf(div(a, _SQRT2)), 1.0))


# -- verification helpers ---------------------------------------------------------


def numeric_gradient(fn, array, eps=1e-6):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``array`` in place.

    ``fn`` must read the current contents of ``array`` on every call.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        h = eps * max(1.0, abs(original))
        flat[i] = original + h
        hi = fn()
        flat[i] = original - h
        lo = fn()
        flat[i] = original
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_gradients(loss_fn, params, eps=1e-6, rtol=1e-4, atol=1e-8):
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` rebuilds the graph from the current parameter values and
    returns a scalar Tensor. Returns a dict name -> worst absolute excess
    over the ``atol + rtol * max(|ad|, |fd|)`` envelope (<= 0 means pass).
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: np.array(p.grad) if p.grad is not None else np.zeros_like(p.value)
                for name, p in params.items()}

    def eval_loss():
        with no_grad():
            return float(loss_fn().value)

    report = {}
    for name, p in params.items():
        fd = numeric_gradient(eval_loss, p.value, eps=eps)
        ad = analytic[name]
        excess = np.abs(ad - fd) - (atol + rtol * np.maximum(np.abs(ad), np.abs(fd)))
        report[name] = float(excess.max())
    return report
