"""Dense tensors with reverse-mode automatic differentiation.

Every backward rule is itself written with differentiable tensor ops, so a
backward pass run with ``create_graph=True`` is recorded like any forward
computation and its results can be differentiated again. This is what the
gradient penalty needs: a loss built from an input gradient, differentiated
with respect to parameters.

Convolution is composed from ``unfold``/``fold`` (im2col and its adjoint) and
batched ``matmul``; bilinear resizing is a pair of matmuls with constant
interpolation matrices. Both families are closed under differentiation.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "tensor", "zeros", "grad", "backward",
    "no_grad", "second_order", "precision", "default_dtype", "is_grad_enabled",
    "is_second_order",
    "add", "sub", "mul", "div", "neg", "scale", "leaky_relu", "tanh", "sigmoid",
    "softplus", "square", "sqrt", "sum", "mean", "l2_norm_sq", "reshape",
    "transpose", "swap_last", "matmul", "sum_to", "broadcast_to", "pad2d",
    "crop2d", "unfold2d", "fold2d", "conv2d", "upsample", "linear", "concat",
    "take",
]


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.second_order = False
        self.dtype = np.dtype(np.float32)
        self.check_finite = True


_state = _State()


def default_dtype() -> np.dtype:
    return _state.dtype


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def is_second_order() -> bool:
    return _state.second_order


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    prev = _state.grad_enabled
    _state.grad_enabled = enabled
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def second_order():
    """Record graphs in second-order mode: backward passes are themselves recorded."""
    prev = _state.second_order
    _state.second_order = True
    try:
        yield
    finally:
        _state.second_order = prev


@contextlib.contextmanager
def precision(bits: int):
    """Set the dtype of newly created tensors (32 or 64 bit) for the block."""
    if bits not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {bits}")
    prev = _state.dtype
    _state.dtype = np.dtype(np.float32 if bits == 32 else np.float64)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """An n-d float array that may take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_taint")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        self.data = np.array(data, dtype=dtype or _state.dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Tensor] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._taint = False

    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        _init(out, self.data, False)
        return out

    def backward(self, create_graph: bool = False) -> None:
        backward(self, create_graph=create_graph)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: _getitem(self, idx)


def _init(t: Tensor, data: np.ndarray, requires_grad: bool) -> None:
    t.data = data
    t.requires_grad = requires_grad
    t.grad = None
    t.name = None
    t._parents = ()
    t._backward = None
    t._taint = False


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _state.dtype))


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _state.dtype
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result; record the node only if some parent needs gradients."""
    if _state.check_finite and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NumericError("operation produced a non-finite value")
    out = Tensor.__new__(Tensor)
    record = _state.grad_enabled and any(p.requires_grad for p in parents)
    _init(out, data, record)
    if record:
        out._parents = tuple(parents)
        out._backward = backward_fn
    out._taint = any(p._taint for p in parents)
    return out


# --------------------------------------------------------------------------
# broadcasting helpers


def _sum_to_array(a: np.ndarray, shape: tuple) -> np.ndarray:
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(shape) if s == 1 and a.shape[lead + i] != 1
    )
    out = np.sum(a, axis=axes, keepdims=True, dtype=np.float64).astype(a.dtype)
    return out.reshape(shape)


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    return _make(_sum_to_array(x.data, shape), (x,), lambda g: (broadcast_to(g, in_shape),))


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    try:
        data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {in_shape} to {shape}") from exc
    return _make(data, (x,), lambda g: (sum_to(g, in_shape),))


def _bshape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from exc


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bshape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bshape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bshape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _bshape(a, b)

    def bw(g):
        ga = sum_to(div(g, b), a.shape)
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _make(data, (a, b), bw)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (neg(g),))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    return _make(x.data * x.dtype.type(c), (x,), lambda g: (scale(g, c),))


def leaky_relu(x: Tensor, slope: float = 0.02) -> Tensor:
    mask = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    m = Tensor.__new__(Tensor)
    _init(m, mask, False)
    return _make(x.data * mask, (x,), lambda g: (mul(g, m),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        t = tanh(x) if _state.grad_enabled else _const(y)
        return (mul(g, sub(1.0, mul(t, t))),)

    return _make(y, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)

    def bw(g):
        s = sigmoid(x) if _state.grad_enabled else _const(y)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _make(y, (x,), bw)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)); note softplus(0) = log 2, so it violates sigma(0)=0."""
    y = np.logaddexp(0.0, x.data).astype(x.dtype)
    return _make(y, (x,), lambda g: (mul(g, sigmoid(x)),))


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _const(a: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    _init(t, a, False)
    return t


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (mul(g, scale(x, 2.0)),))


def sqrt(x: Tensor) -> Tensor:
    if (x.data < 0).any():
        raise NumericError("sqrt of a negative value")
    y = np.sqrt(x.data)

    def bw(g):
        s = sqrt(x) if _state.grad_enabled else _const(y)
        return (div(g, scale(s, 2.0)),)

    return _make(y, (x,), bw)


# --------------------------------------------------------------------------
# reductions (64-bit partial sums)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    data = np.sum(x.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    in_shape = x.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept), in_shape),)

    return _make(np.asarray(data), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    if x.size == 0:
        raise ContractError("mean of an empty tensor")
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def l2_norm_sq(x: Tensor) -> Tensor:
    return sum(square(x))


# --------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {in_shape} to {shape}") from exc
    if data.shape == in_shape:
        return x
    return _make(data, (x,), lambda g: (reshape(g, in_shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (transpose(g, inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    axis = axis % xs[0].ndim
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(_getitem(g, tuple(idx)))
        return tuple(out)

    try:
        data = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _make(data, xs, bw)


def take(x: Tensor, index: int) -> Tensor:
    """Select one entry along the leading axis, keeping the axis."""
    return _getitem(x, (slice(index, index + 1),))


def _getitem(x: Tensor, idx) -> Tensor:
    data = x.data[idx]
    if not isinstance(idx, tuple):
        idx = (idx,)
    if any(not isinstance(i, (slice, int)) for i in idx):
        raise ContractError("only basic slicing is differentiable")
    in_shape = x.shape
    return _make(np.array(data), (x,), lambda g: (_scatter(g, idx, in_shape),))


def _scatter(g: Tensor, idx, shape) -> Tensor:
    data = np.zeros(shape, dtype=g.dtype)
    data[idx] = g.data
    return _make(data, (g,), lambda gg: (_getitem(gg, idx),))


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        ga = sum_to(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None
        gb = sum_to(matmul(swap_last(a), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape [B, N] and weight [M, N]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = matmul(x, swap_last(weight))
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} vs weight {weight.shape}")
        out = add(out, bias)
    return out


# --------------------------------------------------------------------------
# convolution


def pad2d(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x
    data = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    return _make(data, (x,), lambda g: (crop2d(g, p),))


def crop2d(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x
    data = np.ascontiguousarray(x.data[:, :, p:-p, p:-p])
    return _make(data, (x,), lambda g: (pad2d(g, p),))


def unfold2d(x: Tensor, k: int, stride: int = 1) -> Tensor:
    """im2col: [N, C, H, W] -> [N, C*k*k, Ho*Wo], channel-major rows."""
    n, c, h, w = x.shape
    if h < k or w < k:
        raise DimensionError(f"kernel {k} larger than input {h}x{w}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)
    return _make(cols, (x,), lambda g: (fold2d(g, (h, w), k, stride),))


def fold2d(cols: Tensor, hw: tuple, k: int, stride: int = 1) -> Tensor:
    """Adjoint of :func:`unfold2d`: scatter-add columns back onto an [N, C, H, W] grid."""
    h, w = hw
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    n, ckk, _ = cols.shape
    c = ckk // (k * k)
    g = cols.data.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += g[:, :, i, j]
    return _make(out, (cols,), lambda gg: (unfold2d(gg, k, stride),))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, groups: int = 1,
           padding: int = 0, stride: int = 1) -> Tensor:
    """2-d cross-correlation with square odd kernels and optional channel groups."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_g, k, k2 = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigError(f"groups={groups} must divide channels in={c_in}, out={c_out}")
    if k != k2 or k % 2 == 0:
        raise ConfigError(f"kernel must be square and odd, got {k}x{k2}")
    if c_g != c_in // groups:
        raise DimensionError(f"weight expects {c_g * groups} input channels, input has {c_in}")
    if padding < 0:
        raise ConfigError("padding must be non-negative")
    xp = pad2d(x, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise DimensionError(f"input {h}x{w} too small for kernel {k}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = reshape(unfold2d(xp, k, stride), (n, groups, c_g * k * k, ho * wo))
    wmat = reshape(weight, (groups, c_out // groups, c_g * k * k))
    out = reshape(matmul(wmat, cols), (n, c_out, ho, wo))
    if bias is not None:
        if bias.shape != (c_out,):
            raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")
        out = add(out, reshape(bias, (1, c_out, 1, 1)))
    return out


# --------------------------------------------------------------------------
# resampling


def interp_matrix(n_out: int, n_in: int, dtype=np.float64) -> np.ndarray:
    """Half-pixel-center bilinear weights, shape [n_out, n_in]."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * ratio - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        m[o, i0] += 1.0 - f
        m[o, i1] += f
    return m.astype(dtype)


def upsample(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Bilinear resize of a [B, C, H, W] tensor (half-pixel centers, edge clamped)."""
    if target_h < 1 or target_w < 1:
        raise DimensionError("target size must be positive")
    if x.ndim != 4:
        raise DimensionError(f"upsample expects [B, C, H, W], got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    out = x
    if target_h != h:
        out = matmul(_const(interp_matrix(target_h, h, x.dtype)), out)
    if target_w != w:
        out = matmul(out, _const(interp_matrix(target_w, w, x.dtype).T.copy()))
    return out


# --------------------------------------------------------------------------
# graph traversal


def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _run_backward(output: Tensor, targets: Optional[set], grad_output: Optional[Tensor],
                  create_graph: bool) -> dict:
    if not output.requires_grad:
        raise ContractError("tensor has no recorded graph; nothing requires grad")
    if output._taint:
        raise ContractError(
            "loss depends on a gradient computed without create_graph=True; "
            "second-order differentiation needs a second-order graph")
    if grad_output is None:
        if output.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {output.shape}")
        grad_output = Tensor(np.ones(output.shape, dtype=output.dtype), dtype=output.dtype)
    order = _topo(output)
    # keep only nodes that lead to a target
    relevant = set()
    for node in order:
        if (targets is None and node._backward is None) or (targets is not None and id(node) in targets):
            relevant.add(id(node))
        elif any(id(p) in relevant for p in node._parents):
            relevant.add(id(node))
    grads = {id(output): grad_output}
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            if targets is not None and id(node) in targets and not node._parents:
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or id(p) not in relevant:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
            if node is not output and (targets is None or id(node) not in targets):
                del grads[id(node)]
    return grads


def _finish(g: Tensor, create_graph: bool) -> Tensor:
    if not create_graph:
        out = Tensor.__new__(Tensor)
        _init(out, g.data, False)
        out._taint = True
        return out
    return g


def grad(output: Tensor, inputs: Sequence[Tensor], grad_output: Optional[Tensor] = None,
         create_graph: bool = False) -> list:
    """Return d(output)/d(input) for each input; unreachable inputs get exact zeros.

    With ``create_graph=True`` the returned tensors are part of a recorded
    graph and may be differentiated again.
    """
    inputs = list(inputs)
    grads = _run_backward(output, {id(t) for t in inputs}, grad_output, create_graph)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            out.append(_finish(Tensor(np.zeros(t.shape, dtype=t.dtype), dtype=t.dtype), False))
        else:
            out.append(_finish(g, create_graph))
    return out


def backward(loss: Tensor, create_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    grads = _run_backward(loss, None, None, create_graph)
    for node in _topo(loss):
        if node._backward is None and node.requires_grad:
            g = grads.get(id(node))
            if g is None:
                continue
            g = _finish(g, create_graph)
            node.grad = g if node.grad is None else _finish(add(node.grad, g), create_graph)


def parameters_grad(loss: Tensor, params: Iterable[Tensor]) -> list:
    """First-order gradients of ``loss`` as plain numpy arrays."""
    return [g.data for g in grad(loss, list(params))]
