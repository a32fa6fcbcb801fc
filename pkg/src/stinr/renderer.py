"""Space-time feature assembly, RGB decoding and frame synthesis.

Two synthesis routes exist. The per-coordinate route re-queries the spatial
field at every warped coordinate and is what training differentiates. The
whole-frame route materializes the spatial field once on the output lattice,
warps that map bilinearly, and decodes every pixel in one batch; rendering
uses it by default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .geometry import FeatureGrid, bilinear_sample, lattice_centers, warp_grid
from .model import ConfigurationError, Model
from .numerics import Tensor
from .spatial_inr import materialize_spatial, query_spatial
from .temporal_inr import MotionFlowPair, query_flow, time_column


class UsageError(ValueError):
    pass


@dataclass
class RenderRequest:
    space_scale: float = 4.0
    times: tuple = (0.0, 0.5, 1.0)
    region: tuple | None = None  # (x0, y0, x1, y1) as fractions of the frame
    out_shape: tuple | None = None  # explicit (H, W); overrides space_scale
    allow_extrapolation: bool = False

    def __post_init__(self):
        self.times = tuple(float(t) for t in self.times)
        if not self.times:
            raise UsageError("at least one render time is required")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise UsageError(f"render times must be sorted ascending: {self.times}")
        if not self.allow_extrapolation and any(t < 0 or t > 1 for t in self.times):
            raise UsageError("times outside [0, 1] need allow_extrapolation=True")
        if self.out_shape is None and self.space_scale < 1:
            raise UsageError(f"space_scale must be >= 1, got {self.space_scale}")
        if self.region is not None:
            x0, y0, x1, y1 = self.region
            if not (x1 > x0 and y1 > y0):
                raise UsageError(f"region {self.region} has no positive extent")

    def output_shape(self, h, w):
        if self.out_shape is not None:
            return tuple(int(v) for v in self.out_shape)
        return int(round(h * self.space_scale)), int(round(w * self.space_scale))


def image_grid(img, dtype=np.float64):
    """Wrap [3, H, W] (or [B, 3, H, W]) frames as a channels-last FeatureGrid."""
    if isinstance(img, FeatureGrid):
        return img
    return FeatureGrid.from_chw(np.asarray(img, dtype=dtype))


def _xs_tensor(xs, dtype):
    if isinstance(xs, Tensor):
        return xs
    return Tensor(np.asarray(xs, dtype=dtype).reshape(-1, 2))


def _flows(model, grid, xs, xt, bidx, cell, feat, flow_override):
    if flow_override is not None:
        return MotionFlowPair(Tensor(np.asarray(flow_override(xs.data, xt), dtype=grid.data.dtype)))
    if model.cfg.single_network:
        from .geometry import nearest_cell
        z, _, delta = nearest_cell(grid, xs, bidx, scale_delta=model.cfg.scale_delta)
        t = time_column(xt, xs.shape[0], grid.data.dtype)
        return MotionFlowPair(model.temporal_inr(nx.concat([z, delta, t], axis=1)))
    return query_flow(model.temporal_inr, feat, xt)


def spacetime_feature(model, grid, xs, xt, batch_index=None, cell=None, flow_override=None):
    """Concatenated spatial features re-queried at each flow-displaced coordinate."""
    cfg = model.cfg
    if cfg.single_network or not cfg.use_flow:
        raise ConfigurationError("spacetime_feature needs the two-network flow configuration")
    xs = _xs_tensor(xs, grid.data.dtype)
    n = xs.shape[0]
    feat = query_spatial(model.spatial_inr, grid, xs, batch_index, cell)
    flows = _flows(model, grid, xs, xt, batch_index, cell, feat, flow_override)
    nf = flows.num_flows
    warped = nx.concat([xs + flows.flow(k) for k in range(nf)], axis=0)
    bidx = None if batch_index is None else np.tile(np.asarray(batch_index), nf)
    cell_w = None if cell is None or np.ndim(cell) == 1 else np.tile(np.asarray(cell).reshape(-1, 2), (nf, 1))
    f_all = query_spatial(model.spatial_inr, grid, warped, bidx, cell if cell_w is None else cell_w)
    return nx.concat([f_all[k * n:(k + 1) * n] for k in range(nf)], axis=1)


def _content(model, grid, I0g, I1g, xs, xt, bidx, cell, flow_override):
    cfg = model.cfg
    n = xs.shape[0]
    dt = grid.data.dtype
    if cfg.single_network:
        if not cfg.use_flow:
            return nx.concat([bilinear_sample(grid, xs, bidx), bilinear_sample(I0g, xs, bidx),
                              bilinear_sample(I1g, xs, bidx), time_column(xt, n, dt)], axis=1)
        flows = _flows(model, grid, xs, xt, bidx, cell, None, flow_override)
        parts = [bilinear_sample(grid, xs + flows.flow(k), bidx) for k in range(flows.num_flows)]
        w0 = xs + flows.flow(0)
        w1 = xs + flows.flow(flows.num_flows - 1)
        parts += [bilinear_sample(I0g, w0, bidx), bilinear_sample(I1g, w1, bidx)]
        return nx.concat(parts, axis=1)
    if not cfg.use_flow:
        feat = query_spatial(model.spatial_inr, grid, xs, bidx, cell)
        return nx.concat([feat, time_column(xt, n, dt)], axis=1)
    return spacetime_feature(model, grid, xs, xt, bidx, cell, flow_override)


def _multiscale(grid, I0g, I1g, xs, bidx):
    return [bilinear_sample(grid, xs, bidx), bilinear_sample(I0g, xs, bidx), bilinear_sample(I1g, xs, bidx)]


def _decode(model, parts):
    feat = nx.concat(parts, axis=1)
    if feat.shape[1] != model.decoder_in_dim:
        raise ConfigurationError(
            f"decoder expects {model.decoder_in_dim} input features, assembled {feat.shape[1]}")
    return model.decoder(feat)


def decode_rgb(model, grid, I0, I1, xs, xt, batch_index=None, cell=None, flow_override=None):
    """Unclamped RGB [N, 3] at coordinates ``xs`` and time(s) ``xt`` (per-coordinate route)."""
    dt = grid.data.dtype
    I0g, I1g = image_grid(I0, dt), image_grid(I1, dt)
    xs = _xs_tensor(xs, dt)
    parts = [_content(model, grid, I0g, I1g, xs, xt, batch_index, cell, flow_override)]
    if model.cfg.use_multiscale:
        parts += _multiscale(grid, I0g, I1g, xs, batch_index)
    return _decode(model, parts)


def region_cells(h_out, w_out, region=None):
    """Row and column indices of the output lattice cells whose centres lie in ``region``."""
    rows, cols = np.arange(h_out), np.arange(w_out)
    if region is not None:
        x0, y0, x1, y1 = region
        fy = (rows + 0.5) / h_out
        fx = (cols + 0.5) / w_out
        rows = rows[(fy >= y0) & (fy < y1)]
        cols = cols[(fx >= x0) & (fx < x1)]
        if rows.size == 0 or cols.size == 0:
            raise UsageError(f"region {region} contains no output pixels at {h_out}x{w_out}")
    return rows, cols


def _region_coords(h_out, w_out, rows, cols, dtype):
    centers = lattice_centers(h_out, w_out, dtype).reshape(h_out, w_out, 2)
    return centers[np.ix_(rows, cols)].reshape(-1, 2)


def _corner_cells(coords, h, w):
    def axis(v, n):
        u = np.clip((v + 1.0) * (n / 2.0) - 0.5, 0, n - 1)
        i0 = np.minimum(np.floor(u), max(n - 2, 0)).astype(np.int64)
        return i0, np.minimum(i0 + 1, n - 1)

    y0, y1 = axis(coords[:, 0], h)
    x0, x1 = axis(coords[:, 1], w)
    flat = np.concatenate([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1])
    return np.unique(flat)


def synthesize_frame(model, grid, I0, I1, h_out, w_out, xt, region=None, flow_override=None, batch=0):
    """Whole-frame route; returns an unclamped [3, h, w] image (h, w of the region)."""
    if h_out < 1 or w_out < 1:
        raise UsageError(f"output size must be positive, got {h_out}x{w_out}")
    cfg = model.cfg
    dt = grid.data.dtype
    rows, cols = region_cells(h_out, w_out, region)
    coords = _region_coords(h_out, w_out, rows, cols, dt)
    n = coords.shape[0]
    xs = Tensor(coords)
    I0g, I1g = image_grid(I0, dt), image_grid(I1, dt)
    bidx = np.full(n, batch, dtype=np.int64)
    cell = (2.0 / h_out, 2.0 / w_out) if cfg.cell_decode else None
    with nx.no_grad():
        if cfg.single_network or not cfg.use_flow:
            content = _content(model, grid, I0g, I1g, xs, xt, bidx, cell, flow_override)
        else:
            if region is None:
                S = materialize_spatial(model.spatial_inr, grid, h_out, w_out, batch, cell)
                s_rows = S.data.reshape((n, S.channels))
            else:
                s_rows = query_spatial(model.spatial_inr, grid, xs, bidx, cell)
            flows = _flows(model, grid, xs, xt, bidx, cell, s_rows, flow_override)
            if region is not None:
                # fill only the lattice cells the warped samples touch
                need = np.unique(np.concatenate([
                    _corner_cells(coords + flows.flow(k).data, h_out, w_out) for k in range(flows.num_flows)]))
                all_centers = lattice_centers(h_out, w_out, dt)
                vals = query_spatial(model.spatial_inr, grid, all_centers[need],
                                     np.full(need.size, batch, dtype=np.int64), cell).data
                sparse = np.zeros((h_out * w_out, vals.shape[1]), dtype=dt)
                sparse[need] = vals
                S = FeatureGrid(Tensor(sparse.reshape(1, h_out, w_out, -1)))
            warped = [warp_grid(S, flows.flow(k), (h_out, w_out)) if region is None
                      else FeatureGrid(bilinear_sample(S, xs + flows.flow(k)).reshape((1, n, 1, S.channels)))
                      for k in range(flows.num_flows)]
            content = nx.concat([wg.data.reshape((n, wg.channels)) for wg in warped], axis=1)
        parts = [content]
        if cfg.use_multiscale:
            parts += _multiscale(grid, I0g, I1g, xs, bidx)
        rgb = _decode(model, parts)
    return rgb.data.T.reshape(3, rows.size, cols.size).copy()


def synthesize_frame_per_coordinate(model, grid, I0, I1, h_out, w_out, xt, region=None,
                                    flow_override=None, batch=0):
    """Reference route: decode_rgb at every output-lattice centre."""
    rows, cols = region_cells(h_out, w_out, region)
    coords = _region_coords(h_out, w_out, rows, cols, grid.data.dtype)
    cell = (2.0 / h_out, 2.0 / w_out) if model.cfg.cell_decode else None
    with nx.no_grad():
        rgb = decode_rgb(model, grid, I0, I1, coords, xt, np.full(coords.shape[0], batch), cell, flow_override)
    return rgb.data.T.reshape(3, rows.size, cols.size).copy()


def encode_pair(model, I0, I1):
    from .encoder import encode
    with nx.no_grad():
        return encode(model.encoder, np.asarray(I0, dtype=model.cfg.np_dtype),
                      np.asarray(I1, dtype=model.cfg.np_dtype))


def render_video(model, I0, I1, req, grid=None, clamp=True):
    """One frame per requested time; frames are [3, H, W] arrays."""
    if not isinstance(req, RenderRequest):
        raise UsageError("render_video needs a RenderRequest")
    I0 = np.asarray(I0, dtype=model.cfg.np_dtype)
    I1 = np.asarray(I1, dtype=model.cfg.np_dtype)
    if grid is None:
        grid = encode_pair(model, I0, I1)
    h_out, w_out = req.output_shape(I0.shape[1], I0.shape[2])
    frames = []
    for t in req.times:
        img = synthesize_frame(model, grid, I0, I1, h_out, w_out, t, req.region)
        frames.append(np.clip(img, 0.0, 1.0) if clamp else img)
    return frames


__all__ = [
    "Model", "RenderRequest", "UsageError", "decode_rgb", "spacetime_feature", "synthesize_frame",
    "synthesize_frame_per_coordinate", "render_video", "region_cells", "image_grid", "encode_pair",
]
