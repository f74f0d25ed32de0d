"""Seeded finite-difference cases for every differentiable op and loss.

Each entry maps a name to ``make(rng) -> (f, x)`` where ``f`` is a scalar
function of the probed tensor ``x``.  Other operands are fixed constants, so
binary ops appear once per operand.
"""

import numpy as np

from laneforge import tensor as T
from laneforge.losses import LossConfig, focal_loss, poly_loss, weighted_ce

N_CASES = 20
TOL = 1e-4


def _weighted_sum(y, rng):
    r = rng.standard_normal(y.shape)
    return T.tsum(y * r)


def _unary(op, low=-2.0, high=2.0, shape=(3, 4)):
    def make(rng):
        x = rng.uniform(low, high, shape)
        r = rng.standard_normal(shape)
        return (lambda t: T.tsum(op(t) * r)), x
    return make


def _binary(op, side, shape_a=(3, 4), shape_b=(3, 4), b_low=-2.0, b_high=2.0):
    def make(rng):
        a = rng.uniform(-2, 2, shape_a)
        b = rng.uniform(b_low, b_high, shape_b)
        out_shape = np.broadcast_shapes(shape_a, shape_b)
        r = rng.standard_normal(out_shape)
        if side == 0:
            return (lambda t: T.tsum(op(t, b) * r)), a
        return (lambda t: T.tsum(op(a, t) * r)), b
    return make


def _div_denominator(rng):
    a = rng.uniform(-2, 2, (3, 4))
    b = rng.uniform(0.5, 2, (3, 4)) * rng.choice([-1, 1], (3, 4))
    r = rng.standard_normal((3, 4))
    return (lambda t: T.tsum(T.div(a, t) * r)), b


def _conv(side):
    def make(rng):
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        r = rng.standard_normal((3, 5, 5))
        if side == "x":
            return (lambda t: T.tsum(T.conv2d(t, w, b) * r)), x
        if side == "w":
            return (lambda t: T.tsum(T.conv2d(x, t, b) * r)), w
        return (lambda t: T.tsum(T.conv2d(x, w, t) * r)), b
    return make


def _tconv(side):
    def make(rng):
        x = rng.standard_normal((2, 3, 3))
        w = rng.standard_normal((2, 3, 2, 2))
        b = rng.standard_normal(3)
        r = rng.standard_normal((3, 6, 6))
        if side == "x":
            return (lambda t: T.tsum(T.transposed_conv2(t, w, b) * r)), x
        if side == "w":
            return (lambda t: T.tsum(T.transposed_conv2(x, t, b) * r)), w
        return (lambda t: T.tsum(T.transposed_conv2(x, w, t) * r)), b
    return make


def _maxpool(rng):
    x = rng.standard_normal((2, 4, 6))
    r = rng.standard_normal((2, 2, 3))
    return (lambda t: T.tsum(T.maxpool2(t) * r)), x


def _softmax_channels(rng):
    x = rng.standard_normal((2, 3, 4)) * 2
    r = rng.standard_normal((2, 3, 4))
    return (lambda t: T.tsum(T.softmax_over_channels(t) * r)), x


def _softmax_axis(rng):
    x = rng.standard_normal((3, 4, 2))
    r = rng.standard_normal((3, 4, 2))
    return (lambda t: T.tsum(T.softmax(t, axis=1) * r)), x


def _slice_pass(side):
    def make(rng):
        x = rng.standard_normal((2, 4, 5))
        w = rng.standard_normal((2, 3)) * 0.7
        r = rng.standard_normal((2, 4, 5))
        if side == "x":
            return (lambda t: T.tsum(T.slice_pass_down(t, w) * r)), x
        return (lambda t: T.tsum(T.slice_pass_down(x, t) * r)), w
    return make


def _shape_op(op, shape=(2, 3, 4)):
    def make(rng):
        x = rng.standard_normal(shape)
        return (lambda t: _weighted_sum(op(t), np.random.default_rng(7))), x
    return make


def _concat(rng):
    a = rng.standard_normal((2, 3))
    r = rng.standard_normal((5, 3))
    b = rng.standard_normal((3, 3))
    return (lambda t: T.tsum(T.concat([t, b], axis=0) * r)), a


def _stack(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 3))
    r = rng.standard_normal((2, 2, 3))
    return (lambda t: T.tsum(T.stack([b, t], axis=1) * r)), a


def _matmul(side):
    def make(rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        r = rng.standard_normal((3, 2))
        if side == 0:
            return (lambda t: T.tsum(T.matmul(t, b) * r)), a
        return (lambda t: T.tsum(T.matmul(a, t) * r)), b
    return make


def _reduce(op):
    def make(rng):
        x = rng.standard_normal((3, 4, 2))
        r = rng.standard_normal((3, 2))
        return (lambda t: T.tsum(op(t) * r)), x
    return make


def _loss(fn):
    def make(rng):
        # logits -> probabilities so the clamp stays inactive
        z = rng.standard_normal((2, 4, 4))
        y = (rng.random((4, 4)) < 0.3).astype(float)
        return (lambda t: fn(T.softmax_over_channels(t)[1], y)), z
    return make


def _composite(rng):
    """conv -> relu -> pool -> softmax -> PolyLoss."""
    x = rng.standard_normal((2, 6, 6))
    w = rng.standard_normal((2, 2, 3, 3)) * 0.5
    y = (rng.random((3, 3)) < 0.4).astype(float)
    cfg = LossConfig(alpha=1.0, gamma=1.0, epsilon=1.0)

    def f(t):
        z = T.maxpool2(T.relu(T.conv2d(t, w)))
        return poly_loss(T.softmax_over_channels(z)[1], y, cfg)
    return f, x


def _convlstm(rng):
    from laneforge.model import _lstm_gates

    w = rng.standard_normal((8, 4, 3, 3)) * 0.3
    bias = rng.standard_normal(8) * 0.1
    xs = [rng.standard_normal((1, 2, 3, 3)) for _ in range(3)]
    r = rng.standard_normal((1, 2, 3, 3))

    def f(t):
        h = T.Tensor(np.zeros((1, 2, 3, 3)))
        c = T.Tensor(np.zeros((1, 2, 3, 3)))
        for i, x in enumerate(xs):
            inp = t if i == 1 else T.Tensor(x)
            h, c = _lstm_gates(T.conv2d(T.concat([inp, h], axis=1), w, bias), 2, c)
        return T.tsum(h * r)
    return f, xs[1]


CASES = {
    "add.a": _binary(T.add, 0),
    "add.b_broadcast": _binary(T.add, 1, shape_b=(1, 4)),
    "sub.a": _binary(T.sub, 0),
    "sub.b": _binary(T.sub, 1),
    "mul.a": _binary(T.mul, 0),
    "mul.b_broadcast": _binary(T.mul, 1, shape_b=(3, 1)),
    "div.numerator": _binary(T.div, 0, b_low=0.5, b_high=2.0),
    "div.denominator": _div_denominator,
    "relu": _unary(T.relu),
    "sigmoid": _unary(T.sigmoid, -4, 4),
    "tanh": _unary(T.tanh),
    "exp": _unary(T.exp),
    "log": _unary(T.log, 0.2, 3.0),
    "pow": _unary(lambda t: T.pow(t, 2.5), 0.2, 2.0),
    "clamp": _unary(lambda t: T.clamp(t, -0.5, 0.5)),
    "sum": _reduce(lambda t: T.tsum(t, axis=1)),
    "mean": _reduce(lambda t: T.mean(t, axis=1)),
    "reshape": _shape_op(lambda t: T.reshape(t, (6, 4))),
    "transpose": _shape_op(lambda t: T.transpose(t, (2, 0, 1))),
    "flip": _shape_op(lambda t: T.flip(t, 1)),
    "getitem": _shape_op(lambda t: t[:, 1:3, ::2]),
    "concat": _concat,
    "stack": _stack,
    "matmul.a": _matmul(0),
    "matmul.b": _matmul(1),
    "conv2d.input": _conv("x"),
    "conv2d.kernel": _conv("w"),
    "conv2d.bias": _conv("b"),
    "maxpool2": _maxpool,
    "transposed_conv2.input": _tconv("x"),
    "transposed_conv2.kernel": _tconv("w"),
    "transposed_conv2.bias": _tconv("b"),
    "softmax_over_channels": _softmax_channels,
    "softmax": _softmax_axis,
    "slice_pass_down.input": _slice_pass("x"),
    "slice_pass_down.kernel": _slice_pass("w"),
    "weighted_ce": _loss(lambda h, y: weighted_ce(h, y, LossConfig(omega1=3.0, omega0=0.6))),
    "poly_loss": _loss(lambda h, y: poly_loss(h, y, LossConfig(alpha=2.0, gamma=0.5, epsilon=2.0))),
    "focal_loss": _loss(lambda h, y: focal_loss(h, y, alpha=1.0, epsilon=2.0)),
    "composite_conv_pool_softmax_poly": _composite,
    "convlstm_cell": _convlstm,
}


def run_case(name, seed):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    f, x = CASES[name](rng)
    return T.finite_difference_check(f, x)
