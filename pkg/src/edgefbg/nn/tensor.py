"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray plus a gradient buffer and remembers how it was
produced. Calling backward() on a scalar walks the graph once in reverse
topological order, accumulating gradients into every tensor that asked
for them. Heavy ops (convolution, pooling, batch norm) are fused nodes
with hand-derived backward closures; everything else is composed from
elementwise primitives.

Dtype discipline: an op runs in the dtype of its inputs and never
promotes, so the same graph can be driven in float32 for training and in
float64 for numerical gradient checks. Mixing dtypes in one op is an
error rather than a silent upcast.
"""

from __future__ import annotations

import contextlib
from typing import Optional

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _accum(t: "Tensor", g: np.ndarray):
    # gradients are treated as read-only once attached, so sharing the
    # incoming array on first write is safe
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """A node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- graph plumbing ------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple) -> "Tensor":
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
        return out

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no grad")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        # release each node's closure (and the arrays it captured) as soon
        # as it has run: backward closures reference their outputs, and the
        # resulting cycles otherwise keep whole batch graphs alive until a
        # full gc pass. The graph is consumed; leaves keep their grads.
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
                node._backward = None
            node._parents = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- helpers --------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.dtype != self.dtype:
                raise TypeError(f"dtype mismatch: {self.dtype} vs {other.dtype}")
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data + other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad, self.data.shape))
                if other.requires_grad:
                    _accum(other, _unbroadcast(out.grad, other.data.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data * other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad * other.data, self.data.shape))
                if other.requires_grad:
                    _accum(other, _unbroadcast(out.grad * self.data, other.data.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor._result(-self.data, (self,))
        if out.requires_grad:
            def backward():
                _accum(self, -out.grad)
            out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + self._coerce(other)

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data / other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    _accum(self, _unbroadcast(out.grad / other.data, self.data.shape))
                if other.requires_grad:
                    g = -out.grad * self.data / (other.data * other.data)
                    _accum(other, _unbroadcast(g, other.data.shape))
            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor._result(self.data ** exponent, (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad * exponent * self.data ** (exponent - 1))
            out._backward = backward
        return out

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        out = Tensor._result(self.data @ other.data, (self, other))
        if out.requires_grad:
            def backward():
                if self.requires_grad:
                    _accum(self, out.grad @ other.data.T)
                if other.requires_grad:
                    _accum(other, self.data.T @ out.grad)
            out._backward = backward
        return out

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor._result(self.data.reshape(*shape), (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad.reshape(self.data.shape))
            out._backward = backward
        return out

    def flatten(self) -> "Tensor":
        """Collapse all but the leading (batch) axis."""
        return self.reshape(self.data.shape[0], -1)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(g, self.data.shape).astype(self.dtype))
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise -------------------------------------------------------

    def square(self):
        out = Tensor._result(self.data * self.data, (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad * (2.0 * self.data))
            out._backward = backward
        return out

    def sqrt(self):
        out = Tensor._result(np.sqrt(self.data), (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad * (0.5 / out.data))
            out._backward = backward
        return out

    def abs(self):
        out = Tensor._result(np.abs(self.data), (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad * np.sign(self.data))
            out._backward = backward
        return out

    def log1p(self):
        out = Tensor._result(np.log1p(self.data), (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad / (1.0 + self.data))
            out._backward = backward
        return out

    def relu(self):
        out = Tensor._result(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad * (self.data > 0.0).astype(self.dtype))
            out._backward = backward
        return out

    def sigmoid(self):
        x = self.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        out = Tensor._result(s, (self,))
        if out.requires_grad:
            def backward():
                _accum(self, out.grad * out.data * (1.0 - out.data))
            out._backward = backward
        return out


# -- fused network ops ------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation along the last axis with stride 1 and same padding.

    ``x`` is (B, C_in, L), ``weight`` (C_out, C_in, K), ``bias`` (C_out,).
    For even K the extra pad column goes on the right, so the output
    length equals L exactly. Lowered to one GEMM per call via im2col.
    """
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {xd.shape}, {wd.shape}")
    batch, c_in, length = xd.shape
    c_out, c_in_w, k = wd.shape
    if c_in_w != c_in:
        raise ValueError(f"weight expects {c_in_w} input channels, input has {c_in}")
    if bias.data.shape != (c_out,):
        raise ValueError(f"bias must be ({c_out},), got {bias.data.shape}")
    pad_l = (k - 1) // 2
    pad_r = k - 1 - pad_l
    xp = np.pad(xd, ((0, 0), (0, 0), (pad_l, pad_r)))
    # (B, C, L, K) windows -> (B*L, C*K) lowered matrix
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    cols = win.transpose(0, 2, 1, 3).reshape(batch * length, c_in * k)
    w2 = wd.reshape(c_out, c_in * k)
    y2 = cols @ w2.T
    y2 += bias.data
    y = y2.reshape(batch, length, c_out).transpose(0, 2, 1)
    out = Tensor._result(np.ascontiguousarray(y), (x, weight, bias))
    if out.requires_grad:
        def backward():
            dy2 = out.grad.transpose(0, 2, 1).reshape(batch * length, c_out)
            if weight.requires_grad:
                _accum(weight, (dy2.T @ cols).reshape(c_out, c_in, k))
            if bias.requires_grad:
                _accum(bias, dy2.sum(axis=0))
            if x.requires_grad:
                dcols = (dy2 @ w2).reshape(batch, length, c_in, k).transpose(0, 2, 1, 3)
                dxp = np.zeros_like(xp)
                for j in range(k):
                    dxp[:, :, j:j + length] += dcols[:, :, :, j]
                _accum(x, dxp[:, :, pad_l:pad_l + length])
        out._backward = backward
    return out


def maxpool1d(x: Tensor, size: int) -> Tensor:
    """Max pooling along the last axis, stride = size, ceil mode.

    A trailing partial window is kept (padded with -inf), so the output
    length is ceil(L / size).
    """
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"maxpool1d expects (B, C, L), got {xd.shape}")
    if size < 1:
        raise ValueError(f"pool size must be >= 1, got {size}")
    batch, chans, length = xd.shape
    l_out = -(-length // size)
    pad = l_out * size - length
    if pad:
        xp = np.pad(xd, ((0, 0), (0, 0), (0, pad)), constant_values=-np.inf)
    else:
        xp = xd
    win = xp.reshape(batch, chans, l_out, size)
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    out = Tensor._result(y, (x,))
    if out.requires_grad:
        def backward():
            dwin = np.zeros((batch, chans, l_out, size), dtype=xd.dtype)
            np.put_along_axis(dwin, idx[..., None], out.grad[..., None], axis=3)
            _accum(x, dwin.reshape(batch, chans, l_out * size)[:, :, :length])
        out._backward = backward
    return out


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray,
              var: np.ndarray, eps: float, axes: tuple) -> Tensor:
    """Normalize with the given statistics, then scale and shift.

    ``axes`` are the reduction axes the statistics came from. When they
    are the batch statistics of ``x`` itself (training mode), the backward
    pass accounts for their dependence on ``x``; the layer signals this by
    passing exactly the arrays it computed from ``x``.
    """
    xd = x.data
    inv = 1.0 / np.sqrt(var + eps)
    bshape = [1] * xd.ndim
    for ax in range(xd.ndim):
        if ax not in axes:
            bshape[ax] = xd.shape[ax]
    mean_b = mean.reshape(bshape)
    inv_b = inv.reshape(bshape)
    gamma_b = gamma.data.reshape(bshape)
    xhat = (xd - mean_b) * inv_b
    y = gamma_b * xhat + beta.data.reshape(bshape)
    out = Tensor._result(y.astype(xd.dtype, copy=False), (x, gamma, beta))
    if out.requires_grad:
        m = int(np.prod([xd.shape[a] for a in axes]))

        def backward():
            dy = out.grad
            dbeta = dy.sum(axis=axes)
            dgamma = (dy * xhat).sum(axis=axes)
            if gamma.requires_grad:
                _accum(gamma, dgamma)
            if beta.requires_grad:
                _accum(beta, dbeta)
            if x.requires_grad:
                gi = gamma_b * inv_b
                dx = gi * (dy - dbeta.reshape(bshape) / m
                           - xhat * dgamma.reshape(bshape) / m)
                _accum(x, dx.astype(xd.dtype, copy=False))
        out._backward = backward
    return out


def batchnorm_inference(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray,
                        var: np.ndarray, eps: float, axes: tuple) -> Tensor:
    """Normalize with frozen statistics; backward treats them as constants."""
    xd = x.data
    inv = 1.0 / np.sqrt(var + eps)
    bshape = [1] * xd.ndim
    for ax in range(xd.ndim):
        if ax not in axes:
            bshape[ax] = xd.shape[ax]
    gi = (gamma.data * inv).reshape(bshape)
    xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)
    y = gi * xd + (beta.data - gamma.data * inv * mean).reshape(bshape)
    out = Tensor._result(y.astype(xd.dtype, copy=False), (x, gamma, beta))
    if out.requires_grad:
        def backward():
            dy = out.grad
            if gamma.requires_grad:
                _accum(gamma, (dy * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, dy.sum(axis=axes))
            if x.requires_grad:
                _accum(x, (dy * gi).astype(xd.dtype, copy=False))
        out._backward = backward
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p).astype(x.dtype) / (1.0 - p)
    out = Tensor._result(x.data * mask, (x,))
    if out.requires_grad:
        def backward():
            _accum(x, out.grad * mask)
        out._backward = backward
    return out


def euclid_dist(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Euclidean distance between (B, F) tensors, as (B, 1).

    A tiny constant inside the square root keeps the gradient finite when
    the two rows coincide.
    """
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ValueError(f"expected matching (B, F) inputs, got {a.data.shape}, {b.data.shape}")
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=1, keepdims=True) + 1e-12)
    out = Tensor._result(d.astype(a.dtype, copy=False), (a, b))
    if out.requires_grad:
        def backward():
            g = out.grad / out.data * diff
            if a.requires_grad:
                _accum(a, g.astype(a.dtype, copy=False))
            if b.requires_grad:
                _accum(b, (-g).astype(b.dtype, copy=False))
        out._backward = backward
    return out
