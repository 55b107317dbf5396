"""Dense tensors with tape-based reverse-mode differentiation.

Values are immutable numpy arrays wrapped in :class:`Tensor`. Differentiable
ops executed inside an active :class:`GradTape` are appended to it in
execution order; :func:`backward` replays the tape in reverse.

Clip layout is ``(T, H, W, C)``, optionally with a leading batch axis
``(N, T, H, W, C)``. A "frame matrix" is the clip with every frame flattened
row-major over ``(H, W, C)``; stacked as rows it is ``(T, H*W*C)``, i.e. the
transpose of the column-per-frame matrix.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, DimensionError

DEFAULT_DTYPE = np.float32

_local = threading.local()


class Tensor:
    """Immutable n-d array of floats, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, dtype=None, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        arr = np.array(arr, dtype=dtype)
        if any(n <= 0 for n in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def relu(self):
        return relu(self)

    def mean(self, axis):
        return mean(self, axis)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]

    @property
    def input_ids(self) -> tuple:
        return tuple(id(t) for t in self.inputs)

    @property
    def output_id(self) -> int:
        return id(self.output)


@dataclass
class GradTape:
    """Ordered record of differentiable ops.

    Use as a context manager; every op on a tensor that requires grad is
    appended while the tape is active. ``visited`` holds the nodes processed by
    the most recent :func:`backward` call, in visiting order.
    """

    nodes: list = field(default_factory=list)
    visited: list = field(default_factory=list)

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def gradient(self, loss, sources=None):
        return backward(self, loss, sources)


@dataclass(frozen=True)
class OpRecord:
    """Shapes seen by one executed op; the unit of cost accounting."""

    op: str
    input_shapes: tuple
    output_shape: tuple


class OpTrace:
    """Context manager listing every op executed while it is active.

    Unlike :class:`GradTape` it records ops whether or not any input
    requires grad, so it sees inference passes too.
    """

    def __init__(self):
        self.records: list = []

    def __enter__(self):
        stack = getattr(_local, "traces", None)
        if stack is None:
            stack = _local.traces = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.traces.pop()
        return False


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def record_op(op: str, inputs: Sequence[Tensor], out: np.ndarray, grad_fn) -> Tensor:
    """Wrap ``out`` as a tensor and, if needed, append the op to the active tape.

    ``grad_fn`` maps the upstream gradient to a tuple with one entry per input
    (``None`` where an input gets no gradient).
    """
    result = Tensor._wrap(out)
    traces = getattr(_local, "traces", None)
    if traces:
        rec = OpRecord(op, tuple(t.shape for t in inputs), result.shape)
        for trace in traces:
            trace.records.append(rec)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.nodes.append(Node(op, tuple(inputs), result, grad_fn))
    return result


def backward(tape: GradTape, loss: Tensor, sources=None):
    """Reverse-accumulate gradients of the scalar ``loss`` over ``tape``.

    ``sources`` may be a mapping of name to tensor (returns a dict), a sequence
    of tensors (returns a list) or a single tensor. Sources the loss does not
    depend on get zero gradients.
    """
    if loss.size != 1:
        raise ArgumentError(f"loss must be a scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    tape.visited = []
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        tape.visited.append(node)
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise DimensionError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi

    def lookup(t):
        g = grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    if sources is None:
        return grads
    if isinstance(sources, Tensor):
        return lookup(sources)
    if isinstance(sources, Mapping):
        return {k: lookup(v) for k, v in sources.items()}
    return [lookup(t) for t in sources]


# ----------------------------------------------------------------------------
# elementwise and reductions


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record_op("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record_op("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record_op("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record_op("scale", (a,), a.data * a.dtype.type(c), lambda g: (g * g.dtype.type(c),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record_op("relu", (a,), np.where(mask, a.data, 0).astype(a.dtype), lambda g: (g * mask,))


def _norm_axes(axis, ndim):
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ArgumentError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ArgumentError(f"repeated axis in {axis}")
    return tuple(sorted(out))


def mean(a: Tensor, axis) -> Tensor:
    """Mean over one axis or a tuple of axes (reduced axes are dropped)."""
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape

    def grad_fn(g):
        g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / g.dtype.type(count), shape).copy(),)

    return record_op("mean", (a,), a.data.mean(axis=axes, dtype=a.dtype), grad_fn)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel vector along the last axis."""
    if b.shape != a.shape[-1:]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match last axis of {a.shape}")
    lead = tuple(range(a.ndim - 1))
    return record_op("add_bias", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=lead)))


def diag(v: Tensor) -> Tensor:
    if v.ndim != 1:
        raise DimensionError(f"diag expects a vector, got {v.shape}")
    return record_op("diag", (v,), np.diag(v.data), lambda g: (np.diagonal(g).copy(),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "mean_over_axis": mean,
}


def elementwise(kind: str, *operands, **kwargs) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ArgumentError(f"unknown elementwise op {kind!r}") from None
    return fn(*operands, **kwargs)


# ----------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape) or int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    src = a.shape
    return record_op("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ArgumentError(f"{axes} is not a permutation of the {a.ndim} axes of {a.shape}")
    inverse = tuple(np.argsort(axes))
    return record_op(
        "permute", (a,), np.ascontiguousarray(a.data.transpose(axes)),
        lambda g: (np.ascontiguousarray(g.transpose(inverse)),),
    )


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``(m, k) @ (k, n)``, or batched ``(B, m, k) @ (B, k, n)``."""
    ok = a.ndim == b.ndim and a.ndim in (2, 3) and a.shape[-1] == b.shape[-2]
    if ok and a.ndim == 3:
        ok = a.shape[0] == b.shape[0]
    if not ok:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return record_op("matmul", (a, b), ad @ bd, grad_fn)


def softmax_cols(z: Tensor) -> Tensor:
    """Normalize every column (axis -2) to sum to one."""
    if z.ndim < 2:
        raise DimensionError(f"softmax_cols expects a matrix, got {z.shape}")
    e = np.exp(z.data - z.data.max(axis=-2, keepdims=True))
    s = e / e.sum(axis=-2, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-2, keepdims=True)),)

    return record_op("softmax_cols", (z,), s, grad_fn)


# ----------------------------------------------------------------------------
# convolution


def _triple(v, what):
    if isinstance(v, (int, np.integer)):
        v = (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3 or any(x < 1 for x in v):
        raise ArgumentError(f"{what} must be three positive ints, got {v}")
    return v


def conv_geometry(in_extents, ksize, stride, padding):
    """Return ``(pads, out_extents)`` for the three convolved axes.

    "same" pads so that ``out = ceil(n / stride)``; odd padding totals put the
    extra cell on the trailing side. "valid" does not pad.
    """
    pads, outs = [], []
    for n, k, s in zip(in_extents, ksize, stride):
        if padding == "same":
            out = -(-n // s)
            total = max((out - 1) * s + k - n, 0)
            lo, hi = total // 2, total - total // 2
        elif padding == "valid":
            lo = hi = 0
        else:
            raise ArgumentError(f"padding must be 'same' or 'valid', got {padding!r}")
        if k > n + lo + hi:
            raise DimensionError(
                f"kernel extents {tuple(ksize)} exceed padded input extents {tuple(in_extents)}")
        pads.append((lo, hi))
        outs.append((n + lo + hi - k) // s + 1)
    return tuple(pads), tuple(outs)


def _batched(x: Tensor, op: str):
    if x.ndim == 4:
        return False
    if x.ndim == 5:
        return True
    raise DimensionError(f"{op}: expected (T,H,W,C) or (N,T,H,W,C), got {x.shape}")


def _pad_clip(xd, pads):
    return np.pad(xd, ((0, 0),) + pads + ((0, 0),))


def _offset_slices(a, b, c, stride, outs):
    st, sh, sw = stride
    to, ho, wo = outs
    return (slice(None), slice(a, a + st * (to - 1) + 1, st),
            slice(b, b + sh * (ho - 1) + 1, sh), slice(c, c + sw * (wo - 1) + 1, sw))


def _crop(gxp, pads, extents):
    (lt, _), (lh, _), (lw, _) = pads
    t, h, w = extents
    return gxp[:, lt:lt + t, lh:lh + h, lw:lw + w]


def _im2col(xp, ksize, stride, outs):
    """Rows are output positions, columns ordered (k_t, k_h, k_w, c_in)."""
    n, c = xp.shape[0], xp.shape[-1]
    offsets = [(a, b, d) for a in range(ksize[0]) for b in range(ksize[1]) for d in range(ksize[2])]
    if len(offsets) == 1 and stride == (1, 1, 1):
        return xp.reshape(-1, c), offsets
    cols = np.empty((n,) + outs + (len(offsets), c), dtype=xp.dtype)
    for i, (a, b, d) in enumerate(offsets):
        cols[..., i, :] = xp[_offset_slices(a, b, d, stride, outs)]
    return cols.reshape(-1, len(offsets) * c), offsets


def conv3d(x: Tensor, kernel: Tensor, stride=1, padding="same") -> Tensor:
    """3D cross-correlation over (T, H, W).

    ``x`` is ``(T, H, W, C_in)`` or ``(N, T, H, W, C_in)``; ``kernel`` is
    ``(K_t, K_h, K_w, C_in, C_out)``. No kernel flip.
    """
    batched = _batched(x, "conv3d")
    if kernel.ndim != 5 or kernel.shape[3] != x.shape[-1]:
        raise DimensionError(f"conv3d: kernel {kernel.shape} does not fit input {x.shape}")
    stride = _triple(stride, "stride")
    xd = x.data if batched else x.data[None]
    kd = kernel.data
    ksize = kd.shape[:3]
    c_in, c_out = kd.shape[3:]
    pads, outs = conv_geometry(xd.shape[1:4], ksize, stride, padding)
    xp = _pad_clip(xd, pads) if any(lo or hi for lo, hi in pads) else xd
    cols, offsets = _im2col(xp, ksize, stride, outs)
    kmat = kd.reshape(-1, c_out)
    out = (cols @ kmat).reshape((xd.shape[0],) + outs + (c_out,))

    def grad_fn(g):
        g2 = g.reshape(-1, c_out)
        gk = (cols.T @ g2).reshape(kd.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = g2 @ kmat.T
            if cols is not None and len(offsets) == 1 and stride == (1, 1, 1):
                gxp = gcols.reshape(xp.shape)
            else:
                gcols = gcols.reshape((xd.shape[0],) + outs + (len(offsets), c_in))
                gxp = np.zeros(xp.shape, dtype=gcols.dtype)
                for i, (a, b, d) in enumerate(offsets):
                    gxp[_offset_slices(a, b, d, stride, outs)] += gcols[..., i, :]
            gx = _crop(gxp, pads, xd.shape[1:4])
            gx = np.ascontiguousarray(gx if batched else gx[0])
        return gx, gk

    return record_op("conv3d", (x, kernel), out if batched else out[0], grad_fn)


def depthwise_conv3d(x: Tensor, kernel: Tensor, stride=1, padding="same") -> Tensor:
    """Per-channel 3D cross-correlation; ``kernel`` is ``(K_t, K_h, K_w, C)``."""
    batched = _batched(x, "depthwise_conv3d")
    if kernel.ndim != 4 or kernel.shape[3] != x.shape[-1]:
        raise DimensionError(f"depthwise_conv3d: kernel {kernel.shape} does not fit input {x.shape}")
    stride = _triple(stride, "stride")
    xd = x.data if batched else x.data[None]
    kd = kernel.data
    ksize = kd.shape[:3]
    pads, outs = conv_geometry(xd.shape[1:4], ksize, stride, padding)
    xp = _pad_clip(xd, pads)
    offsets = [(a, b, c) for a in range(ksize[0]) for b in range(ksize[1]) for c in range(ksize[2])]
    out = np.zeros((xd.shape[0],) + outs + (xd.shape[4],), dtype=np.result_type(xd, kd))
    for a, b, c in offsets:
        out += xp[_offset_slices(a, b, c, stride, outs)] * kd[a, b, c]

    def grad_fn(g):
        if not batched:
            g = g[None]
        gk = np.zeros_like(kd) if kernel.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for a, b, c in offsets:
            sl = _offset_slices(a, b, c, stride, outs)
            if gk is not None:
                gk[a, b, c] = np.einsum("ntijc,ntijc->c", xp[sl], g)
            if gxp is not None:
                gxp[sl] += g * kd[a, b, c]
        gx = None
        if gxp is not None:
            gx = _crop(gxp, pads, xd.shape[1:4])
            gx = np.ascontiguousarray(gx if batched else gx[0])
        return gx, gk

    return record_op("depthwise_conv3d", (x, kernel), out if batched else out[0], grad_fn)
