"""Continuous spatial feature field decoded from the nearest encoded cell."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .geometry import FeatureGrid, lattice_centers, nearest_cell
from .numerics import Module, Siren, Tensor


@dataclass
class SpatialINRConfig:
    feat_channels: int = 64
    hidden_dims: tuple = (64, 64, 256)
    out_dim: int = 64
    hidden_omega: float = 1.0
    scale_delta: bool = True
    # LIIF-style extensions; both off reproduces the single nearest-cell lookup
    local_ensemble: bool = False
    cell_decode: bool = False

    @property
    def in_dim(self):
        return self.feat_channels + 2 + (2 if self.cell_decode else 0)


class SpatialINR(Module):
    def __init__(self, cfg, rng=None, dtype=np.float64):
        self.net = Siren(cfg.in_dim, cfg.hidden_dims, cfg.out_dim, cfg.hidden_omega, rng=rng, dtype=dtype)
        self.cfg = cfg

    def __call__(self, grid, xs, batch_index=None, cell=None):
        return query_spatial(self, grid, xs, batch_index, cell)


def _cell_input(cfg, grid, cell, n, dtype):
    if cell is None:
        raise ValueError("cell_decode is enabled but no query cell size was given")
    c = np.asarray(cell, dtype=dtype).reshape(-1, 2)
    if cfg.scale_delta:
        c = c * np.array([grid.height / 2.0, grid.width / 2.0], dtype=dtype)
    return Tensor(np.broadcast_to(c, (n, 2)).copy())


def _single_lookup(inr, grid, xs, batch_index, cell):
    cfg = inr.cfg
    z, _, delta = nearest_cell(grid, xs, batch_index, scale_delta=cfg.scale_delta)
    parts = [z, delta]
    if cfg.cell_decode:
        parts.append(_cell_input(cfg, grid, cell, z.shape[0], grid.data.dtype))
    return inr.net(nx.concat(parts, axis=1)), delta


def query_spatial(inr, grid, xs, batch_index=None, cell=None):
    """Feature vectors [N, C_s] at normalized coordinates ``xs`` [N, 2].

    ``xs`` may be a tensor; gradients then flow into it through the in-cell
    offset only (the choice of nearest cell is piecewise constant).
    """
    if not isinstance(xs, Tensor):
        xs = Tensor(np.asarray(xs, dtype=grid.data.dtype).reshape(-1, 2))
    if not inr.cfg.local_ensemble:
        out, _ = _single_lookup(inr, grid, xs, batch_index, cell)
        return out

    # area-weighted blend of the four surrounding cells
    ry, rx = 1.0 / grid.height, 1.0 / grid.width
    preds, areas = [], []
    for vy in (-1, 1):
        for vx in (-1, 1):
            shift = np.array([vy * ry + 1e-6, vx * rx + 1e-6], dtype=grid.data.dtype)
            shifted = nx.clip(xs + shift, -1 + 1e-6, 1 - 1e-6)
            pred, _ = _single_lookup(inr, grid, shifted, batch_index, cell)
            _, center, _ = nearest_cell(grid, shifted.data, batch_index, scale_delta=False)
            rel = (xs.data - center) * np.array([grid.height / 2.0, grid.width / 2.0])
            preds.append(pred)
            areas.append(np.abs(rel[:, 0] * rel[:, 1]) + 1e-9)
    tot = sum(areas)
    # opposite-corner weighting
    order = [3, 2, 1, 0]
    out = None
    for k in range(4):
        w = (areas[order[k]] / tot).astype(grid.data.dtype)[:, None]
        term = preds[k] * w
        out = term if out is None else out + term
    return out


def materialize_spatial(inr, grid, h_out, w_out, batch=0, cell=None):
    """Evaluate the spatial field at every centre of an ``h_out`` x ``w_out`` lattice."""
    if h_out < 1 or w_out < 1:
        raise ValueError(f"output lattice must be at least 1x1, got {h_out}x{w_out}")
    coords = lattice_centers(h_out, w_out, grid.data.dtype)
    bidx = np.full(coords.shape[0], batch, dtype=np.int64)
    if cell is None and inr.cfg.cell_decode:
        cell = (2.0 / h_out, 2.0 / w_out)
    feats = query_spatial(inr, grid, coords, bidx, cell)
    return FeatureGrid(feats.reshape((1, h_out, w_out, feats.shape[1])))
