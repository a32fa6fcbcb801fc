"""Two-frame residual convolutional encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FeatureGrid
from .numerics import Conv2d, Module, ResBlock, Tensor, concat


class InputError(ValueError):
    pass


@dataclass
class EncoderConfig:
    in_channels: int = 6
    feat_channels: int = 64
    num_blocks: int = 4
    kernel_size: int = 3


class Encoder(Module):
    """conv(6->C), ``num_blocks`` x [conv-ReLU-conv + skip], conv(C->C)."""

    def __init__(self, cfg, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        self.head = Conv2d(cfg.in_channels, cfg.feat_channels, cfg.kernel_size, rng=rng, dtype=dtype)
        self.blocks = [ResBlock(cfg.feat_channels, cfg.kernel_size, rng=rng, dtype=dtype)
                       for _ in range(cfg.num_blocks)]
        self.tail = Conv2d(cfg.feat_channels, cfg.feat_channels, cfg.kernel_size, rng=rng, dtype=dtype)
        self.cfg = cfg

    def __call__(self, frames):
        x = self.head(frames)
        for block in self.blocks:
            x = block(x)
        return self.tail(x)


def stack_frames(I0, I1, dtype=np.float64):
    """Pack [3, H, W] (or batched [B, 3, H, W]) frame pairs into [B, H, W, 6]."""
    a, b = np.asarray(I0), np.asarray(I1)
    if a.shape != b.shape:
        raise InputError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if a.ndim != 4 or a.shape[1] != 3:
        raise InputError(f"expected [3, H, W] frames, got {np.asarray(I0).shape}")
    return np.concatenate([a, b], axis=1).transpose(0, 2, 3, 1).astype(dtype)


def encode(encoder, I0, I1):
    """Encode a frame pair into a FeatureGrid at input resolution.

    Frames may be numpy arrays ([3, H, W] or [B, 3, H, W]) or channels-last
    tensors [B, H, W, 3] when gradients with respect to the inputs are needed.
    """
    if isinstance(I0, Tensor):
        if I0.shape != I1.shape:
            raise InputError(f"frame shapes differ: {I0.shape} vs {I1.shape}")
        x = concat([I0, I1], axis=-1)
    else:
        x = Tensor(stack_frames(I0, I1, encoder.head.weight.dtype))
    return FeatureGrid(encoder(x))
