"""Continuous motion-flow field conditioned on spatial features and time."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Module, Siren, Tensor


@dataclass
class TemporalINRConfig:
    spatial_channels: int = 64
    hidden_dims: tuple = (64, 64, 256)
    num_flows: int = 2
    hidden_omega: float = 1.0

    @property
    def in_dim(self):
        return self.spatial_channels + 1

    @property
    def out_dim(self):
        return 2 * self.num_flows


@dataclass
class MotionFlowPair:
    """Per-query flows stacked as [N, 2 * num_flows] in normalized units."""

    flows: Tensor

    @property
    def num_flows(self):
        return self.flows.shape[1] // 2

    def flow(self, k):
        return self.flows[:, 2 * k:2 * k + 2]

    @property
    def flow0(self):
        return self.flow(0)

    @property
    def flow1(self):
        return self.flow(1)


class TemporalINR(Module):
    def __init__(self, cfg, rng=None, dtype=np.float64):
        self.net = Siren(cfg.in_dim, cfg.hidden_dims, cfg.out_dim, cfg.hidden_omega, rng=rng, dtype=dtype)
        self.cfg = cfg

    def __call__(self, spatial_feat, xt):
        return query_flow(self, spatial_feat, xt)


def time_column(xt, n, dtype):
    """Broadcast a scalar, per-query array or tensor time to an [n, 1] tensor."""
    if isinstance(xt, Tensor):
        return xt.reshape((n, 1)) if xt.data.size == n else xt * np.ones((n, 1), dtype=dtype)
    t = np.asarray(xt, dtype=dtype)
    return Tensor(np.broadcast_to(t.reshape(-1, 1), (n, 1)).copy())


def query_flow(tinr, spatial_feat, xt):
    n = spatial_feat.shape[0]
    t = time_column(xt, n, spatial_feat.dtype)
    return MotionFlowPair(tinr.net(nx.concat([spatial_feat, t], axis=1)))


def materialize_flow(tinr, spatial_grid, xt):
    """Flow field [2 * num_flows, H', W'] over every cell of a materialized spatial grid."""
    _, h, w, c = spatial_grid.data.shape
    with nx.no_grad():
        flows = query_flow(tinr, spatial_grid.data.reshape((h * w, c)), xt).flows
    return flows.data.T.reshape(-1, h, w).copy()
