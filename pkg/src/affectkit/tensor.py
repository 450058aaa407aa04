"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Covers exactly the operation set the CNN-RNN emotion models need: conv2d,
max pooling, dense layers, elementwise activations, dropout, concatenation,
slicing/reshaping and the reductions used by the CCC objective. All arithmetic
is float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A float64 array plus optional gradient, recorded on an implicit tape.

    Tensors created by operations keep references to their parents and a
    backward closure; `backward()` on a scalar runs reverse-mode accumulation
    over the reachable graph in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, name=None,
                 _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = tuple(_parents)
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- graph walking ----------------------------------------------------

    def _toposort(self):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        """Populate `.grad` on every tensor this scalar depends on."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        order = self._toposort()
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward_fn = backward
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    out._backward_fn = backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward_fn = backward
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward_fn = backward
    return out


def square(a):
    return mul(a, a)


# -- reductions / structure --------------------------------------------------

def tsum(a, axis=None):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis), _parents=(a,))

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    out._backward_fn = backward
    return out


def tmean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    out._backward_fn = backward
    return out


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, slice, type(Ellipsis), type(None))) for p in parts)


def getitem(a, idx):
    a = as_tensor(a)
    out = Tensor(a.data[idx], _parents=(a,))
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _accumulate(a, full)

    out._backward_fn = backward
    return out


def stack(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.stack([p.data for p in parts], axis=axis), _parents=tuple(parts))

    def backward(g):
        slabs = np.split(g, len(parts), axis=axis)
        for p, s in zip(parts, slabs):
            _accumulate(p, np.squeeze(s, axis=axis))

    out._backward_fn = backward
    return out


def concat_features(parts, axis=-1):
    """Order-preserving concatenation; gradient splits by the same offsets."""
    if not parts:
        raise ShapeError("concat_features needs at least one part")
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))
    widths = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    out._backward_fn = backward
    return out


# -- neural ops ---------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward(g):
        if a.data.ndim == 1:
            _accumulate(a, g @ b.data.T)
            _accumulate(b, np.outer(a.data, g))
        else:
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

    out._backward_fn = backward
    return out


def dense(x, weights, bias):
    """Affine map x @ W + b; x may carry a leading batch dimension."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.data.shape[-1] != weights.data.shape[0]:
        raise ShapeError(
            f"dense: input width {x.data.shape[-1]} != weight rows {weights.data.shape[0]}")
    if weights.data.shape[1] != bias.data.shape[0]:
        raise ShapeError(
            f"dense: weight cols {weights.data.shape[1]} != bias size {bias.data.shape[0]}")
    return add(matmul(x, weights), bias)


def activation(x, kind):
    x = as_tensor(x)
    if kind == "relu":
        out = Tensor(np.maximum(x.data, 0.0), _parents=(x,))
        mask = (x.data > 0).astype(np.float64)

        def backward(g):
            _accumulate(x, g * mask)
    elif kind == "tanh":
        y = np.tanh(x.data)
        out = Tensor(y, _parents=(x,))

        def backward(g):
            _accumulate(x, g * (1.0 - y * y))
    elif kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x.data))
        out = Tensor(y, _parents=(x,))

        def backward(g):
            _accumulate(x, g * y * (1.0 - y))
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    out._backward_fn = backward
    return out


def relu(x):
    return activation(x, "relu")


def sigmoid(x):
    return activation(x, "sigmoid")


def tanh(x):
    return activation(x, "tanh")


def dropout(x, drop_prob, mode, rng=None):
    """Inverted dropout: train mode zeroes with prob p and rescales by 1/(1-p)."""
    if not 0.0 <= drop_prob < 1.0:
        raise ValueError(f"drop_prob must be in [0, 1), got {drop_prob}")
    x = as_tensor(x)
    if mode == "eval" or drop_prob == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs a seeded rng")
    keep = (rng.random(x.data.shape) >= drop_prob).astype(np.float64) / (1.0 - drop_prob)
    out = Tensor(x.data * keep, _parents=(x,))

    def backward(g):
        _accumulate(x, g * keep)

    out._backward_fn = backward
    return out


def _pad_amounts(extent, k, stride, padding):
    if padding == "valid":
        if extent < k:
            raise ShapeError(f"valid padding: input extent {extent} < kernel {k}")
        return 0, 0, (extent - k) // stride + 1
    if padding == "same":
        out = -(-extent // stride)  # ceil
        total = max((out - 1) * stride + k - extent, 0)
        return total // 2, total - total // 2, out
    raise ValueError(f"unknown padding {padding!r}")


def conv2d(x, kernels, stride=1, padding="same"):
    """2-D cross-correlation (no kernel flip) over the trailing H, W, C axes.

    `x` is [H,W,Cin] or [N,H,W,Cin]; `kernels` is [k,k,Cin,Cout].
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d expects rank-3/4 input and rank-4 kernels, "
                         f"got {x.data.shape} and {kernels.data.shape}")
    k = kernels.data.shape[0]
    if kernels.data.shape[1] != k:
        raise ShapeError(f"conv2d kernels must be square, got {kernels.data.shape}")
    if k % 2 == 0 and padding == "same":
        raise ShapeError(f"same padding needs an odd kernel, got {k}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    n, h, w, cin = xd.shape
    if cin != kernels.data.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input has {cin} channels, "
                         f"kernels expect {kernels.data.shape[2]} "
                         f"(input {x.data.shape}, kernels {kernels.data.shape})")
    cout = kernels.data.shape[3]
    ph0, ph1, ho = _pad_amounts(h, k, stride, padding)
    pw0, pw1, wo = _pad_amounts(w, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))

    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # [n, ho, wo, cin, k, k] -> [n*ho*wo, k*k*cin]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * cin)
    wmat = kernels.data.reshape(k * k * cin, cout)
    y = (cols @ wmat).reshape(n, ho, wo, cout)
    out = Tensor(y[0] if squeeze else y, _parents=(x, kernels))

    def backward(g):
        gd = (g[None] if squeeze else g).reshape(n * ho * wo, cout)
        if kernels.requires_grad:
            _accumulate(kernels, (cols.T @ gd).reshape(kernels.data.shape))
        if x.requires_grad:
            dcols = (gd @ wmat.T).reshape(n, ho, wo, k, k, cin)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += \
                        dcols[:, :, :, i, j, :]
            dx = dxp[:, ph0:ph0 + h, pw0:pw0 + w, :]
            _accumulate(x, dx[0] if squeeze else dx)

    out._backward_fn = backward
    return out


def maxpool2d(x, k, stride):
    """Max pooling; gradient routes to the first (row-major) max per window."""
    x = as_tensor(x)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, h, w, c = xd.shape
    if h < k or w < k:
        raise ShapeError(f"maxpool2d window {k} larger than input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(xd, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    flat = win.reshape(n, ho, wo, c, k * k)
    amax = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, amax[..., None], axis=-1)[..., 0]
    out = Tensor(y[0] if squeeze else y, _parents=(x,))

    def backward(g):
        gd = g[None] if squeeze else g
        dx = np.zeros_like(xd)
        oi, oj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        ri = oi[None, :, :, None] * stride + (amax // k)
        rj = oj[None, :, :, None] * stride + (amax % k)
        ni = np.broadcast_to(np.arange(n)[:, None, None, None], amax.shape)
        ci = np.broadcast_to(np.arange(c)[None, None, None, :], amax.shape)
        np.add.at(dx, (ni, ri, rj, ci), gd)
        _accumulate(x, dx[0] if squeeze else dx)

    out._backward_fn = backward
    return out


def median_over_rows(x, mask=None):
    """Per-row median of a [B,T] tensor, ignoring masked-out positions.

    Even counts average the two middle order statistics; the subgradient
    routes to the selected element (split 1/2-1/2 for even counts).
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"median_over_rows expects [B,T], got {x.data.shape}")
    b, t = x.data.shape
    vals = np.zeros(b)
    routes = []  # (row, [cols], weight)
    for i in range(b):
        cols = np.arange(t) if mask is None else np.flatnonzero(~mask[i])
        if cols.size == 0:
            raise ShapeError(f"median_over_rows: row {i} fully masked")
        order = cols[np.argsort(x.data[i, cols], kind="stable")]
        m = cols.size
        if m % 2 == 1:
            sel = [order[m // 2]]
        else:
            sel = [order[m // 2 - 1], order[m // 2]]
        vals[i] = x.data[i, sel].mean()
        routes.append(sel)
    out = Tensor(vals, _parents=(x,))

    def backward(g):
        dx = np.zeros_like(x.data)
        for i, sel in enumerate(routes):
            dx[i, sel] = g[i] / len(sel)
        _accumulate(x, dx)

    out._backward_fn = backward
    return out


def gradients_of(loss):
    """Run backward from a scalar loss; returns {id(tensor): grad} for leaves.

    Gradients are also left on each tensor's `.grad`. Accumulation across
    multiple consumers is summation.
    """
    loss = as_tensor(loss)
    loss.backward()
    return {id(t): t.grad for t in loss._toposort()
            if t.requires_grad and t.grad is not None and not t._parents}
