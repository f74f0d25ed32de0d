"""Dense tensors with a reverse-mode differentiation tape.

Every op takes :class:`Tensor` (or plain scalars) and returns a new
:class:`Tensor`.  When any input requires a gradient, the output keeps a
reference to its parents and a closure mapping the output gradient to the
input gradients.  :meth:`Tensor.backward` walks that graph once in reverse
topological order.

Arrays may carry an optional leading batch axis: the spatial ops accept
``C x H x W`` or ``N x C x H x W``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


_DTYPES = {32: np.float32, 64: np.float64}
_state = {"dtype": np.float64, "grad": True}

# Branch signatures of piecewise ops, recorded only while a gradient check
# is probing for kinks.
_branch_log: list | None = None


def set_precision(bits: int) -> None:
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _state["dtype"] = _DTYPES[bits]


def get_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    old = _state["dtype"]
    set_precision(bits)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph inside the block (inference; frees intermediates early)."""
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def _log_branch(mask: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(np.packbits(mask.ravel()).tobytes())


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    # -- operators -----------------------------------------------------
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

    def __pow__(self, p):
        return pow(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- differentiation -----------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` of every ``requires_grad`` leaf reachable from here.

        Gradients accumulate across calls until :meth:`zero_grad`.
        """
        if self.data.size != 1 and grad is None:
            raise GraphError(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("root is detached from the tape (no input requires grad)")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, self.data.dtype)
        order = topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"{node.op}: gradient shape {pg.shape} != {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[int, ...]
    output: int


@dataclass
class Tape:
    """Flat view of the recorded graph behind a root tensor."""

    records: list[TapeRecord] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        return cls([
            TapeRecord(n.op, tuple(id(p) for p in n._parents if p.requires_grad), id(n))
            for n in topological_order(root)
            if n._backward is not None
        ])


# ---------------------------------------------------------------------------
# helpers


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _finite(data, op)
    out.grad = None
    out.op = op
    out.requires_grad = _state["grad"] and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), back, "div")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    _log_branch(mask)

    def back(g):
        return (g * mask,)

    return _result(a.data * mask, (a,), back, "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

    def back(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), back, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), back, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def back(g):
        return (g * out,)

    return _result(out, (a,), back, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    x = a.data

    def back(g):
        return (g / x,)

    return _result(np.log(x), (a,), back, "log")


def pow(a, p: float) -> Tensor:
    """``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("pow takes a constant exponent")
    p = float(p)
    x = a.data
    if not p.is_integer() and np.any(x < 0):
        raise DomainError("fractional power of a negative value")
    if p < 0 and np.any(x == 0):
        raise DomainError("negative power of zero")
    out = np.power(x, p)

    def back(g):
        if p == 0.0:
            return (np.zeros_like(x),)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(x, p - 1.0)
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return _result(out, (a,), back, "pow")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    _log_branch(inside)

    def back(g):
        return (g * inside,)

    return _result(np.clip(a.data, lo, hi), (a,), back, "clamp")


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return (g.reshape(a.shape),)

    return _result(a.data.reshape(shape), (a,), back, "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)

    def back(g):
        return (g.transpose(inv),)

    return _result(a.data.transpose(axes), (a,), back, "transpose")


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return (np.flip(g, axis),)

    return _result(np.flip(a.data, axis), (a,), back, "flip")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return _result(np.asarray(a.data[idx]), (a,), back, "getitem")


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) != 1:
        raise ShapeError("stack: tensors differ in shape")

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, back, "stack")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), back, "matmul")


# ---------------------------------------------------------------------------
# spatial ops


def _batched(x: np.ndarray, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{op}: expected C x H x W or N x C x H x W, got {x.shape}")


def _correlate_same(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded 'same' cross-correlation.

    Returns the ``N x O x H x W`` output and the ``N x (C*kh*kw) x (H*W)``
    column matrix (kept for the kernel gradient).
    """
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if kh == 1 and kw == 1:
        cols = x.reshape(n, c, h * wd)
    else:
        ph, pw = kh // 2, kw // 2
        xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + wd] = x
        cols6 = np.empty((n, c, kh, kw, h, wd), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols6[:, :, i, j] = xp[:, :, i:i + h, j:j + wd]
        cols = cols6.reshape(n, c * kh * kw, h * wd)
    out = np.matmul(w.reshape(o, -1), cols)
    return out.reshape(n, o, h, wd), cols


def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1 convolution with zero 'same' padding (odd kernels only)."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _batched(x.data, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D, got {weight.shape}")
    o, c, kh, kw = weight.shape
    if xd.shape[1] != c:
        raise ShapeError(f"conv2d: input has {xd.shape[1]} channels, kernel expects {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: even kernel {kh}x{kw} cannot keep 'same' size")
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
        parents.append(bias)
    out, cols = _correlate_same(xd, weight.data)
    if bias is not None:
        out = out + bias.data[:, None, None]
    w = weight.data

    def back(g):
        gb = g[None] if squeeze else g
        n, _, h, wd = gb.shape
        gw = None
        if weight.requires_grad:
            gmat = gb.reshape(n, o, h * wd)
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            wt = np.flip(w, (2, 3)).transpose(1, 0, 2, 3)
            gx, _ = _correlate_same(np.ascontiguousarray(gb), np.ascontiguousarray(wt))
            gx = gx[0] if squeeze else gx
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    out = np.ascontiguousarray(out[0] if squeeze else out)
    return _result(out, parents, back, "conv2d")


def maxpool2(x) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first cell in row-major order."""
    x = as_tensor(x)
    xd, squeeze = _batched(x.data, "maxpool2")
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial extent {h}x{w} must be even")
    blocks = xd.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    if _branch_log is not None:
        _branch_log.append(arg.astype(np.uint8).tobytes())
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = g[None] if squeeze else g
        onehot = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], gb[..., None], axis=-1)
        gx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx[0] if squeeze else gx,)

    return _result(out[0] if squeeze else out, (x,), back, "maxpool2")


def transposed_conv2(x, weight, bias=None) -> Tensor:
    """Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsampling).

    ``weight`` is laid out ``C_in x C_out x 2 x 2``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _batched(x.data, "transposed_conv2")
    if weight.ndim != 4 or weight.shape[2:] != (2, 2):
        raise ShapeError(f"transposed_conv2: kernel must be C_in x C_out x 2 x 2, got {weight.shape}")
    ci, co = weight.shape[:2]
    if xd.shape[1] != ci:
        raise ShapeError(f"transposed_conv2: input has {xd.shape[1]} channels, kernel expects {ci}")
    n, _, h, w = xd.shape
    wd = weight.data
    # (n h w, ci) @ (ci, co*4)
    xmat = xd.transpose(0, 2, 3, 1).reshape(-1, ci)
    y = (xmat @ wd.reshape(ci, -1)).reshape(n, h, w, co, 2, 2)
    out = y.transpose(0, 3, 1, 4, 2, 5).reshape(n, co, 2 * h, 2 * w)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise ShapeError(f"transposed_conv2: bias shape {bias.shape} != ({co},)")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def back(g):
        gb = g[None] if squeeze else g
        gmat = gb.reshape(n, co, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, co * 4)
        gx = (gmat @ wd.reshape(ci, -1).T).reshape(n, h, w, ci).transpose(0, 3, 1, 2)
        gw = (xmat.T @ gmat).reshape(wd.shape)
        grads = [gx[0] if squeeze else np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    out = np.ascontiguousarray(out[0] if squeeze else out)
    return _result(out, parents, back, "transposed_conv2")


def softmax_over_channels(logits) -> Tensor:
    """Softmax across the channel axis (axis -3), stabilised by max subtraction."""
    logits = as_tensor(logits)
    if logits.ndim < 3:
        raise ShapeError(f"softmax_over_channels: expected >=3 dims, got {logits.shape}")
    z = logits.data - logits.data.max(axis=-3, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-3, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-3, keepdims=True)),)

    return _result(out, (logits,), back, "softmax")


def softmax(x, axis: int) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), back, "softmax")


def _depthwise_conv1d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x: n c L, w: c k (odd k), zero 'same' padding along L."""
    k = w.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (k // 2, k // 2)))
    win = sliding_window_view(xp, k, axis=2)  # n c L k
    return np.einsum("nclk,ck->ncl", win, w)


def slice_pass_down(x, weight) -> Tensor:
    """Sequential top-to-bottom message passing over rows.

    Row ``i`` becomes ``row_i + relu(conv1d(row_{i-1}))`` using the already
    updated previous row; ``weight`` is ``C x k``, one 1-D kernel per channel
    applied along the row.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _batched(x.data, "slice_pass")
    n, c, h, w = xd.shape
    if weight.ndim != 2 or weight.shape[0] != c or weight.shape[1] % 2 == 0:
        raise ShapeError(f"slice_pass: kernel must be {c} x odd k, got {weight.shape}")
    wd = weight.data
    y = xd.copy()
    pre = np.empty((n, c, h, w), dtype=xd.dtype)
    pre[:, :, 0] = 0
    for i in range(1, h):
        pre[:, :, i] = _depthwise_conv1d(y[:, :, i - 1], wd)
        y[:, :, i] += np.maximum(pre[:, :, i], 0)
    if _branch_log is not None:
        _branch_log.append(np.packbits((pre[:, :, 1:] > 0).ravel()).tobytes())

    def back(g):
        gy = (g[None] if squeeze else g).copy()
        gw = np.zeros_like(wd)
        k = wd.shape[1]
        flipped = np.flip(wd, 1)
        for i in range(h - 1, 0, -1):
            ga = gy[:, :, i] * (pre[:, :, i] > 0)
            gy[:, :, i - 1] += _depthwise_conv1d(ga, flipped)
            yp = np.pad(y[:, :, i - 1], ((0, 0), (0, 0), (k // 2, k // 2)))
            gw += np.einsum("nclk,ncl->ck", sliding_window_view(yp, k, axis=2), ga)
        return (gy[0] if squeeze else gy, gw)

    return _result(y[0] if squeeze else y, (x, weight), back, "slice_pass")


# ---------------------------------------------------------------------------
# verification


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    excluded: list[tuple[int, ...]]


def finite_difference_check(
    f: Callable[[Tensor], Tensor], x, eps: float = 1e-5
) -> GradCheck:
    """Compare reverse-mode gradients of scalar ``f`` at ``x`` against central differences.

    Coordinates whose +/-eps probes switch a branch of a piecewise op (relu,
    clamp, max-pool argmax, ...) are reported in ``excluded`` and skipped.
    Relative error is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    global _branch_log
    x0 = np.array(as_tensor(x).data, copy=True)
    xt = Tensor(x0, requires_grad=True, dtype=x0.dtype)
    _branch_log = []
    try:
        out = f(xt)
        base_sig = list(_branch_log)
    finally:
        _branch_log = None
    if out.size != 1:
        raise GraphError(f"finite_difference_check needs scalar f, got shape {out.shape}")
    if out.requires_grad:
        out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)

    def probe(arr: np.ndarray) -> tuple[float, list]:
        global _branch_log
        _branch_log = []
        try:
            val = float(f(Tensor(arr, dtype=arr.dtype)).data.reshape(-1)[0])
            return val, list(_branch_log)
        finally:
            _branch_log = None

    worst, checked, excluded = 0.0, 0, []
    for idx in np.ndindex(*x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += eps
        xm[idx] -= eps
        fp, sp = probe(xp)
        fm, sm = probe(xm)
        if sp != base_sig or sm != base_sig:
            excluded.append(idx)
            continue
        numeric = (fp - fm) / (2 * eps)
        a = float(analytic[idx])
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        checked += 1
    return GradCheck(worst, checked, excluded)
