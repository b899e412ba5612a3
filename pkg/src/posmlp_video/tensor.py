"""Minimal dense tensor engine with define-by-run reverse-mode differentiation.

Every op builds a node on the fly; ``Tensor.backward`` walks the recorded
graph once in reverse topological order and then releases it.  Arrays are
float64 numpy arrays, channel axis last.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, finite differences)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf with requires_grad."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed by a previous backward(); re-run the forward pass")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor with requires_grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            if node._consumed:
                raise RuntimeError("graph already consumed by a previous backward(); re-run the forward pass")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._consumed = False
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting element-wise product."""
    b = _lift(b)
    ad, bd = a.data, b.data

    def bw(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"hadamard needs identical shapes, got {a.shape} and {b.shape}")
    return mul(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / np.sqrt(2.0)))

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + xd * pdf),)

    return _make(xd * cdf, (x,), bw, "gelu")


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw, "concat")


def split(x: Tensor, sections: int, axis: int = -1) -> list[Tensor]:
    """Split into ``sections`` equal contiguous chunks along ``axis``."""
    n = x.shape[axis]
    if sections < 1 or n % sections:
        raise ValueError(f"cannot split extent {n} into {sections} equal chunks")
    width = n // sections
    ax = axis % x.ndim
    outs = []
    for i in range(sections):
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(i * width, (i + 1) * width)
        sl = tuple(sl)
        shape = x.shape

        def bw(g, sl=sl, shape=shape):
            full = np.zeros(shape, dtype=DTYPE)
            full[sl] = g
            return (full,)

        outs.append(_make(np.ascontiguousarray(x.data[sl]), (x,), bw, "split"))
    return outs


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the last axis of ``table``: out[..., *idx] = table[..., index].

    Gradients into repeated table slots are summed.
    """
    index = np.asarray(index, dtype=np.intp)
    lead = table.shape[:-1]
    depth = table.shape[-1]
    flat = index.ravel()

    def bw(g):
        g2 = g.reshape(int(np.prod(lead, dtype=np.int64)), flat.size)
        out = np.empty((g2.shape[0], depth), dtype=DTYPE)
        for r in range(g2.shape[0]):
            out[r] = np.bincount(flat, weights=g2[r], minlength=depth)
        return (out.reshape(table.shape),)

    return _make(table.data[..., index], (table,), bw, "take")


def tensor_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def tensor_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(tensor_sum(x, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes are batch axes (numpy broadcasting rules)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw, "matmul")


def token_mix(r: Tensor, x: Tensor) -> Tensor:
    """``r @ x`` for (G, N, N) @ (G, N, K), accumulated over the N axis in a
    fixed left-to-right order with element-wise ops only.

    Each output entry then sees the same rounding sequence however the K
    columns are batched or grouped, which BLAS does not promise.
    """
    if r.ndim != 3 or x.ndim != 3 or r.shape[0] != x.shape[0] or r.shape[2] != x.shape[1]:
        raise ValueError(f"token_mix needs (G,N,M) and (G,M,K), got {r.shape} and {x.shape}")
    rd, xd = r.data, x.data
    out = rd[:, :, 0, None] * xd[:, None, 0, :]
    for k in range(1, rd.shape[2]):
        out += rd[:, :, k, None] * xd[:, None, k, :]

    def bw(g):
        return g @ np.swapaxes(xd, -1, -2), np.swapaxes(rd, -1, -2) @ g

    return _make(out, (r, x), bw, "token_mix")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x @ w + b with w of shape (Cin, Cout)."""
    cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ValueError(f"linear expects {cin} input channels, got {x.shape[-1]}")
    xd = x.data
    x2 = xd.reshape(-1, cin)
    out = x2 @ w.data
    if b is not None:
        if b.shape != (cout,):
            raise ValueError(f"bias shape {b.shape} does not match {cout} outputs")
        out = out + b.data
    wd = w.data

    def bw(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.reshape(xd.shape[:-1] + (cout,)), parents, bw, "linear")


# ---------------------------------------------------------------- normalization


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the per-channel affine."""
    c = x.shape[-1]
    if c == 0:
        raise ValueError("layer_norm over a zero-length axis")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError("layer_norm gain/bias must match the channel extent")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(xd.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


@dataclass
class BatchNormState:
    """Running statistics for ``batch_norm``; ``None`` until the first train-mode call."""

    momentum: float = 0.1
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None


def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, state: BatchNormState,
               train: bool = True, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every non-channel axis.

    Train mode uses batch statistics and updates ``state`` (unbiased variance
    for the running estimate); eval mode uses the running statistics.
    """
    xd = x.data
    red = tuple(range(xd.ndim - 1))
    gd = gain.data
    if train:
        n = int(np.prod([xd.shape[a] for a in red]))
        mu = xd.mean(axis=red)
        xc = xd - mu
        var = (xc * xc).mean(axis=red)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        m = state.momentum
        unbiased = var * n / max(n - 1, 1)
        if state.running_mean is None:
            state.running_mean = np.zeros_like(mu)
            state.running_var = np.ones_like(var)
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased

        def bw(g):
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=red) - xhat * (gh * xhat).mean(axis=red))
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    else:
        if state.running_mean is None:
            raise RuntimeError("batch_norm in eval mode before any running statistics exist")
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (xd - state.running_mean) * inv

        def bw(g):
            return g * gd * inv, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(xhat * gd + bias.data, (x, gain, bias), bw, "batch_norm")


# ---------------------------------------------------------------- convolution


def conv_padding(kernel: int, stride: int) -> int:
    """Odd kernels get (k-1)/2 zero padding; even (patchify) kernels get none."""
    return (kernel - 1) // 2 if kernel % 2 else 0


def conv2d_framewise(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int) -> Tensor:
    """2D convolution applied to every frame independently.

    ``x`` is (..., H, W, Cin) and ``w`` is (k, k, Cin, Cout).  Leading axes
    (batch, time) are untouched.
    """
    k, k2, cin, cout = w.shape
    if k != k2 or k < 1 or stride < 1:
        raise ValueError(f"invalid kernel {w.shape[:2]} / stride {stride}")
    if x.shape[-1] != cin:
        raise ValueError(f"conv expects {cin} input channels, got {x.shape[-1]}")
    lead = x.shape[:-3]
    h, wd_, _ = x.shape[-3:]
    if h < k - 2 * conv_padding(k, stride) or wd_ < k - 2 * conv_padding(k, stride):
        raise ValueError(f"input {h}x{wd_} smaller than kernel {k}")
    p = conv_padding(k, stride)
    frames = x.data.reshape((-1, h, wd_, cin))
    xp = np.pad(frames, ((0, 0), (p, p), (p, p), (0, 0))) if p else frames
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd_ + 2 * p - k) // stride + 1
    wdat = w.data
    out = np.zeros((frames.shape[0], ho, wo, cout), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
            out += patch @ wdat[i, j]
    if b is not None:
        out += b.data

    def bw(g):
        g = g.reshape(out.shape)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wdat)
        g2 = g.reshape(-1, cout)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride), slice(None))
                gw[i, j] = xp[sl].reshape(-1, cin).T @ g2
                gxp[sl] += g @ wdat[i, j].T
        gx = gxp[:, p:p + h, p:p + wd_, :] if p else gxp
        gx = gx.reshape(x.shape)
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.reshape(lead + (ho, wo, cout)), parents, bw, "conv2d")


# ---------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the batch; ``logits`` is (B, K)."""
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    s = ez.sum(axis=-1, keepdims=True)
    logp = z - zmax - np.log(s)
    n = z.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = ez / s
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss), (logits,), bw, "cross_entropy")
