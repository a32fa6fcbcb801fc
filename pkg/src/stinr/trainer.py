"""Two-stage optimisation loop with Charbonnier supervision, Adam and cosine restarts."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .encoder import encode
from .geometry import FeatureGrid, lattice_centers
from .metrics import evaluate_protocol
from .model import ConfigurationError, Model, ModelConfig
from .numerics import AdamState, Tensor, TrainingError, adam_step, cosine_lr, load_checkpoint
from .renderer import RenderRequest, decode_rgb, render_video

log = logging.getLogger(__name__)

METRICS_HEADER = ["iter", "lr", "loss", "val_psnr", "val_ssim"]


class NumericalAbort(TrainingError):
    """Loss or gradient became non-finite."""


@dataclass
class TrainConfig:
    stage1_iters: int = 3000
    stage2_iters: int = 1000
    batch: int = 4
    lr_max: float = 1e-4
    lr_min: float = 1e-7
    cosine_period: int = 1000
    seed: int = 0
    eval_every: int = 500
    stage1_scale: float = 4.0
    scale_min: float = 1.0
    scale_max: float = 4.0
    patch: int = 32
    window: int = 9
    num_targets: int = 3
    target_pool: str = "interior"  # interior (1..7), narrow (1..6) or fixed ({0, 0.5, 1})
    sample_queries: int = 0  # HR pixels supervised per target; 0 means all of them
    augment: bool = True
    charbonnier_eps: float = 1e-3
    val_scale: float = 0.0  # 0 means stage1_scale
    val_mode: str = "center"

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0 or self.stage1_iters + self.stage2_iters <= 0:
            raise ConfigurationError("iteration counts must be non-negative with a positive total")
        if self.batch < 1 or self.cosine_period < 1 or self.eval_every < 1:
            raise ConfigurationError("batch, cosine_period and eval_every must be positive")
        if self.target_pool not in ("interior", "narrow", "fixed"):
            raise ConfigurationError(f"unknown target_pool {self.target_pool!r}")

    @property
    def total_iters(self):
        return self.stage1_iters + self.stage2_iters

    def pool(self):
        last = self.window - 1
        if self.target_pool == "interior":
            return list(range(1, last))
        if self.target_pool == "narrow":
            return list(range(1, last - 1))
        return [0, last // 2, last]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def model_renderer(model):
    """Adapter giving ``model(I0, I1, times, out_shape)`` for the evaluation protocol."""

    def render(I0, I1, times, out_shape):
        return render_video(model, I0, I1, RenderRequest(times=tuple(times), out_shape=tuple(out_shape)))

    return render


class Trainer:
    def __init__(self, model, cfg, windows, val_clip=None, out_dir=None):
        self.model = model
        self.cfg = cfg
        self.windows = windows
        self.val_clip = val_clip
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.iteration = 0
        self.adam = AdamState()
        self.rng = np.random.default_rng(cfg.seed)
        self.log_rows = []
        self.loss_history = []
        self.target_history = []
        self._coords = {}

    # -------------------------------------------------------------- batches

    def stage(self, iteration):
        return 1 if iteration < self.cfg.stage1_iters else 2

    def next_batch(self, iteration):
        from .data import sample_training_batch

        c = self.cfg
        return sample_training_batch(
            self.windows, self.stage(iteration), c.batch, self.rng, patch=c.patch, stage1_scale=c.stage1_scale,
            scale_range=(c.scale_min, c.scale_max), target_pool=c.pool(), num_targets=c.num_targets,
            augment_data=c.augment)

    def _lattice(self, hr):
        if hr not in self._coords:
            self._coords[hr] = lattice_centers(hr, hr, self.model.cfg.np_dtype)
        return self._coords[hr]

    def batch_loss(self, samples):
        """Summed Charbonnier loss over every (sample, target) pair, per-coordinate route."""
        dt = self.model.cfg.np_dtype
        I0 = np.stack([s.lr0 for s in samples]).astype(dt)
        I1 = np.stack([s.lr1 for s in samples]).astype(dt)
        grid = encode(self.model.encoder, I0, I1)
        I0g, I1g = FeatureGrid.from_chw(I0), FeatureGrid.from_chw(I1)
        xs, bidx, xts, tgts = [], [], [], []
        q = self.cfg.sample_queries
        for b, s in enumerate(samples):
            for xt, patch in s.targets:
                coords = self._lattice(patch.shape[1])
                rgb = patch.reshape(3, -1).T
                if q and q < coords.shape[0]:
                    pick = np.sort(self.rng.choice(coords.shape[0], size=q, replace=False))
                    coords, rgb = coords[pick], rgb[pick]
                xs.append(coords)
                tgts.append(rgb)
                bidx.append(np.full(coords.shape[0], b, dtype=np.int64))
                xts.append(np.full(coords.shape[0], xt))
        pred = decode_rgb(self.model, grid, I0g, I1g, np.concatenate(xs).astype(dt), np.concatenate(xts),
                          np.concatenate(bidx))
        target = np.concatenate(tgts).astype(dt)
        # every target patch has the same pixel count, so the sum of per-target means is count * mean
        return nx.charbonnier(pred, target, self.cfg.charbonnier_eps) * float(len(tgts))

    def train_step(self, samples, iteration):
        params = self.model.param_dict()
        self.model.zero_grad()
        loss = self.batch_loss(samples)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalAbort(
                f"non-finite loss at iteration {iteration} (scale {samples[0].scale:.3f}, "
                f"windows {[s.window_index for s in samples]})")
        nx.backward(loss)
        lr = cosine_lr(iteration, self.cfg.cosine_period, self.cfg.lr_max, self.cfg.lr_min)
        try:
            adam_step({k: p.data for k, p in params.items()}, {k: p.grad for k, p in params.items()},
                      self.adam, lr)
        except TrainingError as exc:
            raise NumericalAbort(f"iteration {iteration}: {exc}") from exc
        self.model.zero_grad()
        return value

    # -------------------------------------------------------------- loop

    def validate(self):
        if self.val_clip is None or len(self.val_clip) < self.cfg.window:
            return float("nan"), float("nan")
        scale = self.cfg.val_scale or self.cfg.stage1_scale
        return evaluate_protocol(model_renderer(self.model), self.val_clip, self.cfg.val_mode, scale,
                                 window=self.cfg.window)

    def run(self, until=None):
        """Train up to iteration ``until`` (default: the configured total)."""
        until = self.cfg.total_iters if until is None else until
        interval = []
        while self.iteration < until:
            it = self.iteration
            samples = self.next_batch(it)
            self.target_history.append(tuple(s.target_indices for s in samples))
            loss = self.train_step(samples, it)
            self.loss_history.append(loss)
            interval.append(loss)
            self.iteration += 1
            if self.iteration % self.cfg.eval_every == 0 or self.iteration == self.cfg.total_iters:
                self._evaluate(it, interval)
                interval = []
        return self

    def _evaluate(self, it, interval):
        vp, vs = self.validate()
        row = {"iter": self.iteration, "lr": cosine_lr(it, self.cfg.cosine_period, self.cfg.lr_max, self.cfg.lr_min),
               "loss": float(np.mean(interval)) if interval else float("nan"), "val_psnr": vp, "val_ssim": vs}
        self.log_rows.append(row)
        log.info("iter %d lr %.3g loss %.5f val_psnr %.3f", row["iter"], row["lr"], row["loss"], vp)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.save(self.out_dir / f"checkpoint_{self.iteration:07d}.ckpt")
            self.write_metrics(self.out_dir / "metrics.csv")

    def write_metrics(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRICS_HEADER)
            for r in self.log_rows:
                w.writerow([r["iter"], f"{r['lr']:.6g}", f"{r['loss']:.6f}", f"{r['val_psnr']:.4f}",
                            f"{r['val_ssim']:.4f}"])
        return path

    # -------------------------------------------------------------- persistence

    def save(self, path):
        extra = {}
        for name in self.model.param_dict():
            if name in self.adam.m:
                extra[f"adam.m.{name}"] = self.adam.m[name]
                extra[f"adam.v.{name}"] = self.adam.v[name]
        meta = {"iteration": self.iteration, "adam_step": self.adam.step, "rng": self.rng.bit_generator.state,
                "train": self.cfg.to_dict()}
        return self.model.save(path, meta=meta, extra_arrays=extra)

    @classmethod
    def resume(cls, path, windows, val_clip=None, out_dir=None):
        arrays, config, meta = load_checkpoint(path)
        model = Model(ModelConfig.from_dict(config["model"]))
        model.load_arrays(arrays)
        trainer = cls(model, TrainConfig.from_dict(meta["train"]), windows, val_clip, out_dir)
        trainer.iteration = int(meta["iteration"])
        trainer.adam.step = int(meta["adam_step"])
        dt = model.cfg.np_dtype
        for name in model.param_dict():
            if f"adam.m.{name}" in arrays:
                trainer.adam.m[name] = arrays[f"adam.m.{name}"].astype(dt)
                trainer.adam.v[name] = arrays[f"adam.v.{name}"].astype(dt)
        trainer.rng.bit_generator.state = meta["rng"]
        return trainer


@dataclass
class TrainResult:
    model: Model
    trainer: Trainer
    checkpoint: Path | None = None
    log: list = field(default_factory=list)


def run_training(cfg, model_cfg, windows, val_clip=None, out_dir=None):
    model = Model(model_cfg)
    trainer = Trainer(model, cfg, windows, val_clip, out_dir)
    trainer.run()
    ckpt = None
    if out_dir is not None:
        ckpt = trainer.save(Path(out_dir) / "model_final.ckpt")
        trainer.write_metrics(Path(out_dir) / "metrics.csv")
    return TrainResult(model, trainer, ckpt, trainer.log_rows)
