"""Minimal dense-tensor reverse-mode differentiation over numpy arrays.

Only the operations the model needs are implemented. Gradients are
accumulated on leaf tensors with ``requires_grad=True`` after calling
``backward()`` on a scalar result.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._backward = None
        self._parents = ()

    # -- structure ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t._accumulate(g)
            if t._backward is not None:
                for parent, pg in t._backward(g):
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, powc(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self):
        return float(self.data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    track = any(p.requires_grad or p._backward is not None for p in parents)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return ((a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b):
    """x @ W with x of any leading shape (..., F) and W 2-D (F, O)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")

    def backward(g):
        ga = g @ b.data.T
        gr = g.reshape(-1, g.shape[-1])
        xr = a.data.reshape(-1, a.data.shape[-1])
        gb = xr.T @ gr
        return ((a, ga), (b, gb))

    return _make(a.data @ b.data, (a, b), backward)


def powc(a, p):
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)

    def backward(g):
        return ((a, g * p * a.data ** (p - 1.0)),)

    return _make(a.data ** p, (a,), backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        return ((a, g * mask),)

    return _make(a.data * mask, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        return ((a, g.reshape(old)),)

    return _make(a.data.reshape(shape), (a,), backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gx, a.shape).copy()),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tmax(a, axis, keepdims=False):
    """Max along one axis; gradient routes to the first argmax."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        gx = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, gx, axis=axis)
        return ((a, full),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


def gather_rows(a, indices):
    """Select rows of a 2-D tensor; gradient scatters back (with repeats)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return ((a, full),)

    return _make(a.data[indices], (a,), backward)


def rotate_rows(a, rotations):
    """Apply a constant per-row rotation: out[n] = R[n] @ a[n]."""
    a = as_tensor(a)
    rotations = np.asarray(rotations, dtype=DTYPE)

    def backward(g):
        return ((a, np.einsum("ni,nij->nj", g, rotations)),)

    return _make(np.einsum("nij,nj->ni", rotations, a.data), (a,), backward)


def graph_conv(influence, feats, weights):
    """Kernel-weighted neighborhood aggregation.

    ``influence`` is a constant (N, N, K) array with influence[i, j, k] the
    weight of kernel k for neighbor j of node i (zero for non-neighbors).
    Output rows are sum_j sum_k influence[i, j, k] * feats[j] @ weights[k].
    """
    feats, weights = as_tensor(feats), as_tensor(weights)
    influence = np.asarray(influence, dtype=DTYPE)
    pooled = np.einsum("ijk,jf->ikf", influence, feats.data)

    def backward(g):
        g_pooled = np.einsum("io,kfo->ikf", g, weights.data)
        g_w = np.einsum("ikf,io->kfo", pooled, g)
        g_f = np.einsum("ijk,ikf->jf", influence, g_pooled)
        return ((feats, g_f), (weights, g_w))

    return _make(np.einsum("ikf,kfo->io", pooled, weights.data), (feats, weights), backward)


def softmax_cross_entropy(logits, labels):
    """Mean negative log softmax probability, max-shifted for stability."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.data.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        probs = np.exp(logp)
        probs[np.arange(n), labels] -= 1.0
        return ((logits, g * probs / n),)

    return _make(loss, (logits,), backward)


def softmax(logits_data):
    """Plain numpy softmax over the last axis (no gradient)."""
    x = np.asarray(logits_data, dtype=DTYPE)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
