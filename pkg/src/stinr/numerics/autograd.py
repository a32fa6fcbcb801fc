"""Array-level reverse-mode automatic differentiation.

Every node holds a numpy array. Operations are coarse (a whole dense layer,
a whole bilinear gather), so a training step builds a graph of a few dozen
nodes rather than millions of scalar ones.
"""
from __future__ import annotations

import contextlib

import numpy as np
import scipy.sparse as sp

# Names of operations whose backward pass should be deliberately corrupted.
# Used only by the gradient-check fault-injection hook.
FAULTS: set[str] = set()

_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def inject_fault(op_name):
    FAULTS.add(op_name)
    try:
        yield
    finally:
        FAULTS.discard(op_name)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return total(self)

    def mean(self):
        return mul(total(self), 1.0 / self.data.size)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss):
    """Populate ``.grad`` on every ``requires_grad`` tensor reachable from ``loss``.

    Gradients accumulate across calls; callers zero them between steps.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")

    order = []
    seen = set()
    stack = [(loss, False)]
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

    grads = {id(loss): np.ones_like(loss.data)}
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
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------- elementwise


def _constant_like(b, ref):
    if isinstance(b, Tensor):
        return b
    return Tensor(np.asarray(b, dtype=ref.data.dtype))


def add(a, b):
    a = as_tensor(a)
    b = _constant_like(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "add")


def mul(a, b):
    a = as_tensor(a)
    b = _constant_like(b, a)
    b_data = b.data
    try:
        out = a.data * b_data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        ga = _unbroadcast(g * b_data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "mul")


def sine(x, frequency=1.0):
    z = x.data * x.data.dtype.type(frequency) if frequency != 1.0 else x.data
    out = np.sin(z)

    def bw(g):
        d = g * (np.cos(z) * frequency)
        if "sine" in FAULTS:
            d = d * 1.01
        return (d,)

    return _make(out, (x,), bw, "sine")


def relu(x):
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype, copy=False)

    def bw(g):
        return (g * mask,)

    return _make(out, (x,), bw, "relu")


def clip(x, lo, hi):
    """Clamp values; gradient passes only where the input was inside the range."""
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return (g * mask,)

    return _make(out, (x,), bw, "clip")


# ----------------------------------------------------------------- structural


def total(x):
    def bw(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _make(np.asarray(x.data.sum()), (x,), bw, "sum")


def reshape(x, shape):
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), bw, "reshape")


def transpose(x, axes):
    out = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(out, (x,), bw, "transpose")


def getitem(x, idx):
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] += g
        return (full,)

    return _make(out, (x,), bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tensors, bw, "concat")


# ---------------------------------------------------------------- dense layers


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape [batch, in_dim]."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    xd = x.data
    if xd.shape[0] == 1:
        # single-row products take a different BLAS path; keep results batch-invariant
        out = (np.concatenate([xd, xd]) @ weight.data.T)[:1]
    else:
        out = xd @ weight.data.T
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, bw, "linear")


def conv2d(x, weight, bias=None):
    """Stride-1 'same' convolution with zero padding, channels-last.

    ``x`` is [B, H, W, Cin]; ``weight`` is [k, k, Cin, Cout] with odd k.
    """
    k = weight.shape[0]
    if x.ndim != 4 or x.shape[3] != weight.shape[2] or k % 2 == 0:
        raise DimensionError(f"conv2d: input shape {x.shape} incompatible with weight shape {weight.shape}")
    p = k // 2
    B, H, W, cin = x.shape
    cout = weight.shape[3]
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((B, H, W, cout), dtype=x.data.dtype)
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy:dy + H, dx:dx + W, :].reshape(-1, cin)
            out += (patch @ weight.data[dy, dx]).reshape(B, H, W, cout)
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for dy in range(k):
            for dx in range(k):
                if gw is not None:
                    patch = xp[:, dy:dy + H, dx:dx + W, :].reshape(-1, cin)
                    gw[dy, dx] = patch.T @ g2
                if gxp is not None:
                    gxp[:, dy:dy + H, dx:dx + W, :] += (g2 @ weight.data[dy, dx].T).reshape(B, H, W, cin)
        gx = gxp[:, p:p + H, p:p + W, :] if gxp is not None else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, bw, "conv2d")


# ---------------------------------------------------------------- grid access


def _scatter_matrix(flat_index, weights, n_rows, n_cells):
    cols = flat_index.ravel()
    rows = np.broadcast_to(np.arange(n_rows)[:, None], flat_index.shape).ravel()
    return sp.csr_matrix((weights.ravel(), (rows, cols)), shape=(n_rows, n_cells))


def gather_cells(grid, batch_index, rows, cols):
    """Pick grid[b, i, j, :] for each query from a channels-last grid [B, H, W, C]."""
    B, H, W, C = grid.shape
    flat = (np.asarray(batch_index) * H + np.asarray(rows)) * W + np.asarray(cols)
    gd = grid.data.reshape(-1, C)
    out = gd[flat]

    def bw(g):
        m = _scatter_matrix(flat[:, None], np.ones((flat.size, 1), dtype=g.dtype), flat.size, B * H * W)
        return (np.asarray(m.T @ g).reshape(grid.shape),)

    return _make(out, (grid,), bw, "gather")


def bilinear_sample(grid, coords, batch_index=None):
    """Bilinear interpolation of a channels-last grid [B, H, W, C] at normalized coords.

    ``coords`` is [N, 2] holding (y, x) in the cell-centred [-1, 1] frame.
    Samples outside the lattice are clamped to the border cell centres.
    Differentiable with respect to both the grid values and the coordinates.
    """
    coords = as_tensor(coords)
    B, H, W, C = grid.shape
    n = coords.shape[0]
    if batch_index is None:
        batch_index = np.zeros(n, dtype=np.int64)
    c = coords.data
    dt = grid.data.dtype

    def axis_terms(v, size):
        u = (v + 1.0) * (size / 2.0) - 0.5
        inside = (u > 0) & (u < size - 1)
        u = np.clip(u, 0, size - 1)
        i0 = np.minimum(np.floor(u), max(size - 2, 0)).astype(np.int64)
        f = u - i0
        i1 = np.minimum(i0 + 1, size - 1)
        return i0, i1, f, inside

    y0, y1, fy, in_y = axis_terms(c[:, 0], H)
    x0, x1, fx, in_x = axis_terms(c[:, 1], W)
    base = np.asarray(batch_index, dtype=np.int64) * H
    idx = np.stack([
        (base + y0) * W + x0,
        (base + y0) * W + x1,
        (base + y1) * W + x0,
        (base + y1) * W + x1,
    ], axis=1)
    wts = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1).astype(dt)
    gd = grid.data.reshape(-1, C)
    corners = gd[idx]  # [N, 4, C]
    out = (corners[:, 0] * wts[:, 0:1] + corners[:, 1] * wts[:, 1:2]
           + corners[:, 2] * wts[:, 2:3] + corners[:, 3] * wts[:, 3:4])

    def bw(g):
        ggrid = None
        if grid.requires_grad:
            m = _scatter_matrix(idx, wts, n, B * H * W)
            ggrid = np.asarray(m.T @ g).reshape(grid.shape)
        gc = None
        if coords.requires_grad:
            c00, c01, c10, c11 = corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3]
            d_fy = (1 - fx)[:, None] * (c10 - c00) + fx[:, None] * (c11 - c01)
            d_fx = (1 - fy)[:, None] * (c01 - c00) + fy[:, None] * (c11 - c10)
            gy = (g * d_fy).sum(axis=1) * (H / 2.0) * in_y
            gx = (g * d_fx).sum(axis=1) * (W / 2.0) * in_x
            gc = np.stack([gy, gx], axis=1).astype(coords.data.dtype)
        return ggrid, gc

    return _make(out, (grid, coords), bw, "bilinear")


# ---------------------------------------------------------------------- loss


def charbonnier(pred, target, eps=1e-3):
    """Mean of sqrt((pred - target)^2 + eps^2)."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"charbonnier: pred shape {pred.shape} != target shape {target.shape}")
    if eps <= 0:
        raise ValueError("charbonnier eps must be positive")
    d = pred.data - target
    r = np.sqrt(d * d + eps * eps)
    # offset form keeps the zero-residual value exactly eps
    out = np.asarray((r - eps).mean() + eps)

    def bw(g):
        return (g * d / r / d.size,)

    return _make(out, (pred,), bw, "charbonnier")
