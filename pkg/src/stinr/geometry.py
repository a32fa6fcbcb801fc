"""Coordinate conventions and resampling.

Spatial coordinates are cell-centred in [-1, 1] per axis: cell ``i`` of an
axis with ``N`` cells has centre ``-1 + (2i + 1) / N``. Pairs are ordered
(y, x). Grids are held channels-last as ``[B, H, W, C]`` tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class SizeError(ValueError):
    pass


@dataclass
class FeatureGrid:
    """A C-channel feature map on an H x W lattice (optionally batched)."""

    data: Tensor  # [B, H, W, C]

    @classmethod
    def from_chw(cls, array, requires_grad=False, dtype=None):
        arr = np.asarray(array, dtype=dtype)
        if arr.ndim == 3:
            arr = arr[None]
        return cls(Tensor(np.ascontiguousarray(arr.transpose(0, 2, 3, 1)), requires_grad=requires_grad))

    @property
    def batch(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def channels(self):
        return self.data.shape[3]

    def to_chw(self, index=0):
        return self.data.data[index].transpose(2, 0, 1)


def normalize_index(i, n):
    if n <= 0:
        raise ValueError(f"axis length must be positive, got {n}")
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for axis of length {n}")
    return -1.0 + (2 * i + 1) / n


def axis_centers(n):
    return -1.0 + (2 * np.arange(n) + 1) / n


def lattice_centers(h, w, dtype=np.float64):
    """Row-major [h*w, 2] array of (y, x) cell centres."""
    yy, xx = np.meshgrid(axis_centers(h), axis_centers(w), indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1).astype(dtype)


def nearest_index(v, n):
    """Index of the cell whose centre is nearest to ``v``; ties go to the smaller index."""
    u = (np.clip(v, -1.0, 1.0) + 1.0) * (n / 2.0)
    return np.clip(np.ceil(u).astype(np.int64) - 1, 0, n - 1)


def nearest_cell(grid, xs, batch_index=None, scale_delta=True):
    """Nearest-cell lookup.

    Returns ``(z, center, delta)``: the nearest cell's feature vectors [N, C],
    the cell centres [N, 2] and the offsets ``xs - center`` [N, 2]. With
    ``scale_delta`` the offsets are multiplied by N/2 per axis so one cell
    width has length 1. A single coordinate pair returns unbatched results.

    ``delta`` is differentiable in ``xs`` within a cell; ``z`` is piecewise
    constant in ``xs``.
    """
    single = not isinstance(xs, Tensor) and np.ndim(xs) == 1
    xs_t = nx.autograd.as_tensor(np.atleast_2d(xs) if single else xs)
    if not isinstance(xs, Tensor):
        xs_t = Tensor(xs_t.data.astype(grid.data.dtype, copy=False))
    n = xs_t.shape[0]
    if batch_index is None:
        batch_index = np.zeros(n, dtype=np.int64)
    H, W = grid.height, grid.width
    clamped = nx.clip(xs_t, -1.0, 1.0)
    iy = nearest_index(xs_t.data[:, 0], H)
    ix = nearest_index(xs_t.data[:, 1], W)
    center = np.stack([axis_centers(H)[iy], axis_centers(W)[ix]], axis=1).astype(grid.data.dtype)
    z = nx.gather_cells(grid.data, batch_index, iy, ix)
    delta = clamped - center
    if scale_delta:
        delta = delta * np.array([H / 2.0, W / 2.0], dtype=grid.data.dtype)
    if single:
        return z.data[0], center[0], delta.data[0]
    return z, center, delta


def bilinear_sample(grid, xs_batch, batch_index=None):
    """Differentiable bilinear sampling with border clamping; returns [N, C]."""
    xs = xs_batch if isinstance(xs_batch, Tensor) else Tensor(np.asarray(xs_batch, dtype=grid.data.dtype))
    return nx.bilinear_sample(grid.data, xs, batch_index)


def warp_grid(grid, flow, base_coords=None):
    """Backward-warp ``grid`` onto a target lattice.

    ``flow`` is either an array [2, H', W'] or a tensor [H'*W', 2] of
    displacements in normalized units; ``base_coords`` defaults to the
    target lattice centres. Returns a FeatureGrid [1, H', W', C].
    """
    if isinstance(flow, Tensor):
        if base_coords is None:
            raise ValueError("base_coords is required when flow is given per pixel")
        h, w = base_coords
        flat = flow
    else:
        flow = np.asarray(flow, dtype=grid.data.dtype)
        _, h, w = flow.shape
        flat = Tensor(flow.reshape(2, -1).T.copy())
    base = lattice_centers(h, w, grid.data.dtype)
    out = nx.bilinear_sample(grid.data, flat + base)
    return FeatureGrid(out.reshape((1, h, w, grid.channels)))


# ---------------------------------------------------------------- bicubic


def keys_kernel(x, a=-0.5):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
        np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0),
    )


def _mirror(idx, n):
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx < n, idx, period - 1 - idx)


def resize_matrix(n_in, n_out):
    """[n_out, n_in] cubic-convolution resampling matrix (antialiased when shrinking)."""
    scale = n_out / n_in
    widen = min(scale, 1.0)
    support = 2.0 / widen
    out_pos = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(out_pos - support).astype(np.int64)
    taps = int(np.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = keys_kernel((out_pos[:, None] - idx) * widen) * widen
    w /= w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), _mirror(idx, n_in).ravel()), w.ravel())
    return m


def bicubic_resize(image, scale=None, out_shape=None):
    """Separable Keys (a = -0.5) resampling of a [C, H, W] array.

    Give either ``scale`` (output dims ``round(dim * scale)``) or an explicit
    ``out_shape``. For shrinking, the kernel is widened by 1/scale and the
    weights renormalised; borders use symmetric reflection.
    """
    if isinstance(image, FeatureGrid):
        image = image.to_chw()
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    _, h, w = img.shape
    if out_shape is None:
        if scale is None or scale <= 0:
            raise SizeError(f"invalid resize scale {scale!r}")
        out_shape = (int(round(h * scale)), int(round(w * scale)))
    ho, wo = out_shape
    if ho < 1 or wo < 1:
        raise SizeError(f"resize of {h}x{w} by {scale} gives degenerate size {ho}x{wo}")
    if (ho, wo) == (h, w):
        out = img.copy()
    else:
        my = resize_matrix(h, ho)
        mx = resize_matrix(w, wo)
        out = np.matmul(np.matmul(my, img), mx.T)
    return out[0] if squeeze else out
