"""Central-difference gradient verification and the per-op check registry."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import ops
from .tensor import Tensor

Builder = Callable[[Tensor], Tensor]


class NonDeterministicError(RuntimeError):
    pass


def grad_check(builder: Builder, x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    The per-coordinate error is ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    leaf = Tensor(x.copy(), requires_grad=True)
    loss = builder(leaf)
    if loss.size != 1:
        raise ValueError(f"builder must return a scalar, got shape {loss.shape}")
    again = builder(Tensor(x.copy())).data
    if not np.array_equal(loss.data, again):
        raise NonDeterministicError("builder gave different values on identical inputs")
    loss.backward()
    analytic = np.zeros_like(x) if leaf.grad is None else leaf.grad

    numeric = np.empty_like(x)
    flat, num_flat = x.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = builder(Tensor(x.copy())).item()
        flat[i] = orig - eps
        down = builder(Tensor(x.copy())).item()
        flat[i] = orig
        num_flat[i] = (up - down) / (2 * eps)

    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0


def _away_from_zero(rng, shape, margin=0.05):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(margin, 1.0, size=shape)


def _projected(fn, out_shape, rng):
    """Reduce an op output to a scalar with fixed random weights."""
    r = rng.normal(size=out_shape)
    return lambda t: ops.sum(ops.mul(fn(t), r))


def _unary(op, rng, make_input):
    x = make_input(rng)
    out_shape = op(Tensor(x)).shape
    return [(_projected(op, out_shape, rng), x)]


def _binary(op, a, b, rng):
    out_shape = op(Tensor(a), Tensor(b)).shape
    r = rng.normal(size=out_shape)
    return [
        (lambda t: ops.sum(ops.mul(op(t, b), r)), a),
        (lambda t: ops.sum(ops.mul(op(a, t), r)), b),
    ]


def _shape(rng, ndim=2, lo=2, hi=5):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=ndim))


def _case_matmul(rng):
    n, k, m = _shape(rng, 3)
    return _binary(ops.matmul, rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng)


def _case_add(rng):
    n, m = _shape(rng)
    return _binary(ops.add, rng.normal(size=(n, m)), rng.normal(size=(m,)), rng)


def _case_mul(rng):
    n, m = _shape(rng)
    return _binary(ops.mul, rng.normal(size=(n, m)), rng.normal(size=(n, 1)), rng)


def _case_sub(rng):
    n, m = _shape(rng)
    return _binary(ops.sub, rng.normal(size=(n, m)), rng.normal(size=(1, m)), rng)


def _case_mul_const(rng):
    c = float(rng.normal())
    return _unary(lambda t: ops.mul_const(t, c), rng, lambda r: r.normal(size=_shape(r, 3)))


def _conv_geometry(rng):
    k = int(rng.choice([2, 3, 4]))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.integers(0, k))
    return k, stride, padding


def _case_conv2d(rng):
    k, s, p = _conv_geometry(rng)
    n, cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    h = int(rng.integers(k, k + 4))
    x = rng.normal(size=(n, cin, h, h))
    w = rng.normal(size=(cout, cin, k, k))
    return _binary(lambda a, b: ops.conv2d(a, b, stride=s, padding=p), x, w, rng)


def _case_conv_transpose2d(rng):
    k, s, p = _conv_geometry(rng)
    n, cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    # output size (h-1)s - 2p + k must stay positive
    h = int(rng.integers(max(1, (2 * p - k) // s + 2), 5))
    y = rng.normal(size=(n, cin, h, h))
    w = rng.normal(size=(cin, cout, k, k))
    return _binary(lambda a, b: ops.conv_transpose2d(a, b, stride=s, padding=p), y, w, rng)


def _case_batchnorm_train(rng):
    n, c, h = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(2, 4))
    x = rng.normal(size=(n, c, h, h))
    gamma = rng.normal(size=(c,))
    beta = rng.normal(size=(c,))
    r = rng.normal(size=x.shape)

    def f(a, g, b):
        return ops.sum(ops.mul(ops.batchnorm2d(a, g, b, training=True), r))

    return [
        (lambda t: f(t, gamma, beta), x),
        (lambda t: f(x, t, beta), gamma),
        (lambda t: f(x, gamma, t), beta),
    ]


def _case_batchnorm_eval(rng):
    n, c, h = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(2, 4))
    x = rng.normal(size=(n, c, h, h))
    gamma = rng.normal(size=(c,))
    beta = rng.normal(size=(c,))
    running = {"mean": rng.normal(size=(c,)), "var": rng.uniform(0.5, 2.0, size=(c,))}
    r = rng.normal(size=x.shape)

    def f(a, g, b):
        return ops.sum(ops.mul(ops.batchnorm2d(a, g, b, training=False, running=running), r))

    return [
        (lambda t: f(t, gamma, beta), x),
        (lambda t: f(x, t, beta), gamma),
        (lambda t: f(x, gamma, t), beta),
    ]


def _case_reshape(rng):
    a, b = _shape(rng)
    return _unary(lambda t: ops.reshape(t, (b, a)), rng, lambda r: r.normal(size=(a, b)))


def _case_sum(rng):
    shape = _shape(rng, 3)
    axis = int(rng.integers(0, 3))
    return _unary(lambda t: ops.sum(t, axis=axis), rng, lambda r: r.normal(size=shape))


def _case_mean(rng):
    shape = _shape(rng, 3)
    axis = (0, 2) if rng.random() < 0.5 else None
    return _unary(lambda t: ops.mean(t, axis=axis), rng, lambda r: r.normal(size=shape))


def _case_clip(rng):
    shape = _shape(rng)

    def make(r):
        # keep every value at least 0.05 away from the clip bounds at +-0.5
        return r.choice([-0.25, 0.25, 1.0, -1.0], size=shape) + r.uniform(-0.2, 0.2, size=shape)

    return _unary(lambda t: ops.clip(t, -0.5, 0.5), rng, make)


GRAD_CHECK_CASES: dict[str, Callable[[np.random.Generator], list]] = {
    "matmul": _case_matmul,
    "add": _case_add,
    "mul": _case_mul,
    "elementwise_sub": _case_sub,
    "elementwise_mul_const": _case_mul_const,
    "conv2d": _case_conv2d,
    "conv_transpose2d": _case_conv_transpose2d,
    "relu": lambda rng: _unary(ops.relu, rng, lambda r: _away_from_zero(r, _shape(r, 3))),
    "leaky_relu": lambda rng: _unary(
        lambda t: ops.leaky_relu(t, 0.2), rng, lambda r: _away_from_zero(r, _shape(r, 3))
    ),
    "tanh": lambda rng: _unary(ops.tanh, rng, lambda r: r.normal(size=_shape(r, 3))),
    "sigmoid": lambda rng: _unary(ops.sigmoid, rng, lambda r: 2 * r.normal(size=_shape(r, 3))),
    "batchnorm2d[train]": _case_batchnorm_train,
    "batchnorm2d[eval]": _case_batchnorm_eval,
    "reshape": _case_reshape,
    "sum": _case_sum,
    "mean": _case_mean,
    "abs": lambda rng: _unary(ops.abs, rng, lambda r: _away_from_zero(r, _shape(r, 3))),
    "log": lambda rng: _unary(ops.log, rng, lambda r: r.uniform(0.2, 3.0, size=_shape(r, 3))),
    "clip": _case_clip,
}


def check_op(name: str, rng: np.random.Generator, points: int = 10, eps: float = 1e-5, cases=None) -> float:
    """Worst relative error of op ``name`` over ``points`` random instances."""
    cases = GRAD_CHECK_CASES if cases is None else cases
    worst = 0.0
    for _ in range(points):
        for builder, x in cases[name](rng):
            worst = max(worst, grad_check(builder, x, eps))
    return worst


def check_all(rng: np.random.Generator, points: int = 10, eps: float = 1e-5, names: Iterable[str] | None = None, cases=None):
    cases = GRAD_CHECK_CASES if cases is None else cases
    names = list(cases) if names is None else list(names)
    return {name: check_op(name, rng, points, eps, cases) for name in names}
