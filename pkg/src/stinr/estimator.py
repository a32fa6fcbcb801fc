"""scikit-learn style wrapper: ``fit`` on clips, ``predict`` frames from input pairs."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import VideoClip, degrade, sliding_windows
from .metrics import evaluate_protocol
from .model import Model, ModelConfig
from .renderer import RenderRequest, render_video
from .trainer import TrainConfig, Trainer, model_renderer


def check_frame(frame, name="frame"):
    """Validate a [3, H, W] frame with finite values in [0, 1]; returns a float64 copy."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name} must have shape [3, H, W], got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr.copy()


def check_clips(X):
    """Accept a VideoClip, a list of clips, or a list of [3, H, W] frames."""
    if isinstance(X, VideoClip):
        return [X]
    items = list(X)
    if not items:
        raise ValueError("no training data")
    if all(isinstance(c, VideoClip) for c in items):
        return items
    return [VideoClip([check_frame(f, f"frame {k}") for k, f in enumerate(items)])]


def check_pairs(X):
    """A single (I0, I1) pair or a sequence of pairs; returns (pairs, was_single)."""
    if len(X) == 2 and np.ndim(X[0]) == 3:
        return [(check_frame(X[0], "I0"), check_frame(X[1], "I1"))], True
    return [(check_frame(a, "I0"), check_frame(b, "I1")) for a, b in X], False


class SpaceTimeSR(BaseEstimator):
    """Continuous space-time super-resolution model.

    ``fit`` trains on one or more clips; ``predict`` takes low-resolution
    frame pairs and returns frames at ``times`` upscaled by ``space_scale``.
    """

    def __init__(self, feat_channels=16, num_blocks=2, spatial_channels=16, use_flow=True,
                 use_multiscale=True, single_network=False, dtype="float32", stage1_iters=3000,
                 stage2_iters=0, batch=2, lr_max=5e-4, lr_min=1e-7, cosine_period=3000, stage1_scale=2.0,
                 scale_min=1.0, scale_max=4.0, patch=32, sample_queries=512, augment=False,
                 space_scale=2.0, times=(0.0, 0.5, 1.0), random_state=0):
        self.feat_channels = feat_channels
        self.num_blocks = num_blocks
        self.spatial_channels = spatial_channels
        self.use_flow = use_flow
        self.use_multiscale = use_multiscale
        self.single_network = single_network
        self.dtype = dtype
        self.stage1_iters = stage1_iters
        self.stage2_iters = stage2_iters
        self.batch = batch
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.cosine_period = cosine_period
        self.stage1_scale = stage1_scale
        self.scale_min = scale_min
        self.scale_max = scale_max
        self.patch = patch
        self.sample_queries = sample_queries
        self.augment = augment
        self.space_scale = space_scale
        self.times = times
        self.random_state = random_state

    def model_config(self):
        return ModelConfig(feat_channels=self.feat_channels, num_blocks=self.num_blocks,
                           spatial_channels=self.spatial_channels, use_flow=self.use_flow,
                           use_multiscale=self.use_multiscale, single_network=self.single_network,
                           dtype=self.dtype, seed=self.random_state)

    def train_config(self):
        total = self.stage1_iters + self.stage2_iters
        return TrainConfig(stage1_iters=self.stage1_iters, stage2_iters=self.stage2_iters, batch=self.batch,
                           lr_max=self.lr_max, lr_min=self.lr_min, cosine_period=self.cosine_period,
                           seed=self.random_state, eval_every=max(total, 1), stage1_scale=self.stage1_scale,
                           scale_min=self.scale_min, scale_max=self.scale_max, patch=self.patch,
                           sample_queries=self.sample_queries, augment=self.augment)

    def fit(self, X, y=None):
        clips = check_clips(X)
        tcfg = self.train_config()
        windows = [w for c in clips for w in sliding_windows(c, tcfg.window, 1)]
        self.model_ = Model(self.model_config())
        self.trainer_ = Trainer(self.model_, tcfg, windows).run()
        self.n_iter_ = self.trainer_.iteration
        self.loss_curve_ = list(self.trainer_.loss_history)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit (or load) before predict")

    def predict(self, X, times=None, space_scale=None, region=None):
        """Frames [3, H, W] per time for one pair, or a list of such lists for many pairs."""
        self._check_fitted()
        pairs, single = check_pairs(X)
        req = RenderRequest(space_scale=space_scale or self.space_scale,
                            times=tuple(times if times is not None else self.times), region=region)
        out = [render_video(self.model_, a, b, req) for a, b in pairs]
        return out[0] if single else out

    def score(self, X, y=None, mode="center"):
        """Mean protocol PSNR on the clip(s) ``X`` degraded by ``stage1_scale``."""
        self._check_fitted()
        clips = check_clips(X)
        renderer = model_renderer(self.model_)
        return float(np.mean([evaluate_protocol(renderer, c, mode, self.stage1_scale)[0] for c in clips]))

    def degrade(self, frame):
        """Low-resolution input for ``predict``; clipped since bicubic overshoots."""
        return np.clip(degrade(check_frame(frame), self.stage1_scale), 0.0, 1.0)

    def save(self, path):
        self._check_fitted()
        return self.model_.save(path, meta={"estimator": self.get_params()})

    @classmethod
    def load(cls, path):
        from .numerics import load_checkpoint

        _, _, meta = load_checkpoint(path)
        params = dict(meta.get("estimator", {}))
        if "times" in params:
            params["times"] = tuple(params["times"])
        est = cls(**params)
        est.model_ = Model.load(path)
        return est
