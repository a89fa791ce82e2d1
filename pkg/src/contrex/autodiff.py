"""Minimal reverse-mode tape over float64 numpy arrays.

Just enough machinery to differentiate the prompted encoder forward pass and
the MLP heads with respect to prompt parameters, pool keys, and head weights.
Values are numpy arrays (matrices are 2-d, losses are 0-d); every op is
deterministic so training is bit-reproducible given a seed. Gradients are
validated against `numeric.finite_diff_grad` in the test suite.
"""

import numpy as np
from scipy.special import erf

from .numeric import softmax_rows

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            # copy: g may be another node's grad buffer passed through
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g


def constant(x):
    return Tensor(x)


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64, copy=True), requires_grad=True)


def _make(value, parents, backward):
    out = Tensor(value, parents=parents)
    if out.requires_grad:
        out._backward = backward
    return out


def backward(root):
    """Accumulate gradients of a scalar-valued tensor into all leaves."""
    if root.value.size != 1:
        raise ValueError("backward() expects a scalar tensor")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def matmul(a, b):
    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bw)


def transpose(a):
    def bw(g):
        a.accumulate(g.T)

    return _make(a.value.T, (a,), bw)


def add(a, b):
    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(a.value + b.value, (a, b), bw)


def add_bias(a, bias):
    """Add a length-F bias row to every row of an (N, F) matrix."""

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)
        if bias.requires_grad:
            bias.accumulate(np.sum(g, axis=0))

    return _make(a.value + bias.value[None, :], (a, bias), bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        a.accumulate(g * c)

    return _make(a.value * c, (a,), bw)


def concat_rows(parts):
    sizes = [p.value.shape[0] for p in parts]

    def bw(g):
        at = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[at : at + n])
            at += n

    return _make(np.concatenate([p.value for p in parts], axis=0), tuple(parts), bw)


def concat_cols(parts):
    sizes = [p.value.shape[1] for p in parts]

    def bw(g):
        at = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(g[:, at : at + n])
            at += n

    return _make(np.concatenate([p.value for p in parts], axis=1), tuple(parts), bw)


def slice_rows(a, start, stop):
    def bw(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        a.accumulate(full)

    return _make(a.value[start:stop].copy(), (a,), bw)


def softmax(a):
    """Row-wise softmax with max-subtraction."""
    s = softmax_rows(a.value)

    def bw(g):
        inner = np.sum(g * s, axis=1, keepdims=True)
        a.accumulate((g - inner) * s)

    return _make(s, (a,), bw)


def layer_norm(a, gain, bias, eps=1e-5):
    """Row-wise layer normalization with learnable gain/bias vectors."""
    x = a.value
    mu = np.mean(x, axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = (x - mu) / std
    y = xhat * gain.value[None, :] + bias.value[None, :]

    def bw(g):
        if gain.requires_grad:
            gain.accumulate(np.sum(g * xhat, axis=0))
        if bias.requires_grad:
            bias.accumulate(np.sum(g, axis=0))
        if a.requires_grad:
            dxhat = g * gain.value[None, :]
            m1 = np.mean(dxhat, axis=1, keepdims=True)
            m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
            a.accumulate((dxhat - m1 - xhat * m2) / std)

    return _make(y, (a, gain, bias), bw)


def gelu(a):
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    y = x * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        a.accumulate(g * (cdf + x * pdf))

    return _make(y, (a,), bw)


def tanh(a):
    y = np.tanh(a.value)

    def bw(g):
        a.accumulate(g * (1.0 - y * y))

    return _make(y, (a,), bw)


def cross_entropy_mean(logits, labels):
    """Mean cross-entropy of an (N, C) logit matrix against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    probs = softmax_rows(logits.value)
    n = logits.value.shape[0]
    rows = np.arange(n)
    shifted = logits.value - np.max(logits.value, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1)) + np.max(logits.value, axis=1)
    value = np.mean(lse - logits.value[rows, labels])

    def bw(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        logits.accumulate(d * (float(g) / n))

    return _make(value, (logits,), bw)


def cosine_distance_to(q, k):
    """1 - cos(q, k) with q a fixed query vector and k a 1-d key tensor."""
    qv = np.asarray(q, dtype=np.float64)
    kv = k.value
    nq = np.linalg.norm(qv)
    nk = np.linalg.norm(kv)
    cos = np.dot(qv, kv) / (nq * nk)

    def bw(g):
        k.accumulate(-float(g) * (qv / (nq * nk) - cos * kv / (nk * nk)))

    return _make(1.0 - cos, (k,), bw)


def add_scalars(terms):
    def bw(g):
        for t in terms:
            if t.requires_grad:
                t.accumulate(g)

    return _make(sum(float(t.value) for t in terms), tuple(terms), bw)
