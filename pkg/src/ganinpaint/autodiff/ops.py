"""Differentiable operations.

Every op takes Tensors (constants are wrapped on the fly), computes its
forward value with numpy and returns a Tensor whose backward closure maps
the output gradient to one gradient per input.  ``forward_op`` dispatches
by name through ``OPS``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import conv as _conv
from .tensor import ShapeError, Tensor, as_tensor, make_result

LOG_CLAMP = 1e-7


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("elementwise_sub", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), bw, "elementwise_sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return (ga, gb)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def mul_const(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_result(a.data * c, (a,), lambda g: (g * c,), "elementwise_mul_const")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return make_result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha)
    return make_result(a.data * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def abs(a) -> Tensor:  # noqa: A001 - mirrors the op name
    a = as_tensor(a)
    sign = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError(f"log: non-positive input (min {a.data.min():.3g}); clamp probabilities first")
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes)
    kept = tuple(1 if i in axes else d for i, d in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(kept), a.shape).copy(),)

    return make_result(out, (a,), bw, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes)
    kept = tuple(1 if i in axes else d for i, d in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(kept) / count, a.shape).copy(),)

    return make_result(out, (a,), bw, "mean")


def _check_conv_shapes(op, x, w, in_axis):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"{op}: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"{op}: square kernels only, got weight {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeError(f"{op}: input channels of {x.shape} do not match weight {w.shape}")


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    _check_conv_shapes("conv2d", x, w, 1)
    k = w.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    out, cols = _conv.conv2d_forward(x.data, w.data, stride, padding)

    def bw(g):
        return _conv.conv2d_backward(
            g, x.shape, w.data, cols, stride, padding, need_x=x.requires_grad, need_w=w.requires_grad
        )

    return make_result(out, (x, w), bw, "conv2d")


def conv_transpose2d(y, w, stride: int = 1, padding: int = 0) -> Tensor:
    y, w = as_tensor(y), as_tensor(w)
    _check_conv_shapes("conv_transpose2d", y, w, 0)
    out = _conv.conv_transpose2d_forward(y.data, w.data, stride, padding)

    def bw(g):
        return _conv.conv_transpose2d_backward(
            g, y.data, w.data, stride, padding, need_y=y.requires_grad, need_w=w.requires_grad
        )

    return make_result(out, (y, w), bw, "conv_transpose2d")


def batchnorm2d(
    x,
    gamma,
    beta,
    training: bool = True,
    running: Optional[dict] = None,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of an (N, C, H, W) tensor.

    In training mode batch statistics are used and, when ``running`` is a dict
    holding ``mean``/``var`` arrays, they are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.  In inference
    mode the stored running statistics are used and the op is affine in x.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm2d: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    gam = gamma.data.reshape(1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running is not None:
            running["mean"] *= momentum
            running["mean"] += (1.0 - momentum) * mu
            running["var"] *= momentum
            running["var"] += (1.0 - momentum) * var
    else:
        if running is None:
            raise ValueError("batchnorm2d: inference mode needs running statistics")
        mu, var = running["mean"], running["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    out = gam * xhat + beta.data.reshape(1, -1, 1, 1)
    m = x.shape[0] * x.shape[2] * x.shape[3]

    def bw(g):
        gg = gb = gx = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=(0, 2, 3))
        if beta.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxhat = g * gam
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = inv.reshape(1, -1, 1, 1) / m * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv.reshape(1, -1, 1, 1)
        return (gx, gg, gb)

    return make_result(out, (x, gamma, beta), bw, "batchnorm2d")


OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "conv2d": conv2d,
    "conv_transpose2d": conv_transpose2d,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "batchnorm2d": batchnorm2d,
    "reshape": reshape,
    "sum": sum,
    "mean": mean,
    "abs": abs,
    "log": log,
    "elementwise_sub": sub,
    "elementwise_mul_const": mul_const,
    "clip": clip,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}; known ops: {sorted(OPS)}") from None
    return fn(*inputs, **attrs)


def clamped_log_prob(p: Tensor) -> Tensor:
    """log of a probability clamped to [1e-7, 1 - 1e-7]."""
    return log(clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP))
