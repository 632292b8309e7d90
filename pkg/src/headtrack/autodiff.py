"""Minimal reverse-mode automatic differentiation over numpy arrays.

Double precision throughout; just the handful of ops the fusion pipeline
needs: broadcast add/mul, scalar coefficients, sigmoid, axis means, channel
concat/split, and a same-padded stride-1 2-d convolution.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    """A numpy array with an optional gradient buffer and a backward closure."""

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite tensor data")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()

        def visit(t: Tensor):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient encountered")
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t._backward is None:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data
    return Tensor(out_data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data
    return Tensor(out_data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * b.data, a.shape),
                                       _unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, coeff: Tensor) -> Tensor:
    """Multiply a tensor by a scalar coefficient tensor."""
    if coeff.data.size != 1:
        raise ValueError("coefficient must be scalar")
    return Tensor(coeff.data * x.data, _parents=(x, coeff),
                  _backward=lambda g: (coeff.data * g,
                                       np.array((g * x.data).sum()).reshape(coeff.shape)))


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor(s, _parents=(x,), _backward=lambda g: (g * s * (1.0 - s),))


def tsum(x: Tensor) -> Tensor:
    return Tensor(x.data.sum(), _parents=(x,),
                  _backward=lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor, axis, keepdims: bool = True) -> Tensor:
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = int(np.prod([x.shape[a] for a in axes]))
    out_data = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return Tensor(out_data, _parents=(x,), _backward=backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor(out_data, _parents=tuple(tensors), _backward=backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return Tensor(x.data[idx], _parents=(x,), _backward=backward)


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    # xp: (Cin, h + k - 1, w + k - 1) -> (Cin * k * k, h * w)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return win.transpose(0, 3, 4, 1, 2).reshape(-1, h * w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded stride-1 convolution; x (Cin, H, W), weight (Cout, Cin, k, k)."""
    cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError("kernel must be square with odd size")
    if x.shape[0] != cin:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    _, h, w = x.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, h, w)
    w_mat = weight.data.reshape(cout, -1)
    out_data = (w_mat @ cols + bias.data[:, None]).reshape(cout, h, w)

    def backward(g):
        g_mat = g.reshape(cout, -1)
        d_weight = (g_mat @ cols.T).reshape(weight.shape)
        d_bias = g_mat.sum(axis=1)
        d_cols = (w_mat.T @ g_mat).reshape(cin, k, k, h, w)
        d_xp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                d_xp[:, ki:ki + h, kj:kj + w] += d_cols[:, ki, kj]
        d_x = d_xp[:, pad:pad + h, pad:pad + w] if pad else d_xp
        return (d_x, d_weight, d_bias)

    return Tensor(out_data, _parents=(x, weight, bias), _backward=backward)
