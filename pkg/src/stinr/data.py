"""Synthetic clips, frame directories, degradation and training-batch sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames_io import IngestionError, read_frame
from .geometry import SizeError, bicubic_resize

SYNTHETIC_KINDS = ("moving_square", "two_squares", "sinusoid_texture")


class DataError(ValueError):
    pass


# ------------------------------------------------------------------ scenes


@dataclass
class Square:
    p0: np.ndarray  # centre (y, x) at time 0, in frame fractions
    velocity: np.ndarray  # per frame, in frame fractions
    size: float
    color: np.ndarray

    def center(self, time):
        return self.p0 + time * self.velocity


def _overlap(lo, hi, edges):
    """Fraction of each pixel interval [edges[k], edges[k+1]] covered by [lo, hi]."""
    a = np.maximum(edges[:-1], lo)
    b = np.minimum(edges[1:], hi)
    return np.clip(b - a, 0.0, None) / (edges[1] - edges[0])


@dataclass
class SyntheticScene:
    """Analytic scene with constant-velocity motion; renderable at any size and time.

    ``time`` is measured in frames, so frame ``k`` of a generated clip is
    ``scene.frame(k, H, W)``.
    """

    kind: str
    background: np.ndarray
    squares: list = field(default_factory=list)
    wave: np.ndarray | None = None  # (fy, fx) cycles per frame height/width
    wave_velocity: np.ndarray | None = None
    wave_phase: np.ndarray | None = None

    def frame(self, time, h, w):
        if self.kind == "sinusoid_texture":
            return self._texture(time, h, w)
        img = np.empty((3, h, w))
        img[:] = self.background[:, None, None]
        ey = np.linspace(0.0, 1.0, h + 1)
        ex = np.linspace(0.0, 1.0, w + 1)
        for sq in self.squares:
            cy, cx = sq.center(time)
            half = sq.size / 2
            cov = np.outer(_overlap(cy - half, cy + half, ey), _overlap(cx - half, cx + half, ex))
            img = img * (1 - cov) + sq.color[:, None, None] * cov
        return img

    def _texture(self, time, h, w):
        # exact pixel-box average of a travelling sinusoid
        fy, fx = 2 * np.pi * self.wave
        vy, vx = self.wave_velocity
        yc = (np.arange(h) + 0.5) / h - vy * time
        xc = (np.arange(w) + 0.5) / w - vx * time
        arg = fy * yc[:, None] + fx * xc[None, :]
        atten = np.sinc(fy / (2 * h) / np.pi) * np.sinc(fx / (2 * w) / np.pi)
        return np.stack([0.5 + 0.35 * atten * np.sin(arg + ph) for ph in self.wave_phase])

    def window_frame(self, start, xt, window, h, w):
        """Ground truth at normalized time ``xt`` inside the window beginning at frame ``start``."""
        return self.frame(start + xt * (window - 1), h, w)


def make_scene(kind, length, seed):
    if kind not in SYNTHETIC_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    rng = np.random.default_rng(seed)
    bg = rng.uniform(0.05, 0.3, 3)
    span = max(length - 1, 1)
    if kind == "sinusoid_texture":
        return SyntheticScene(kind, bg, wave=rng.uniform(1.0, 3.0, 2),
                              wave_velocity=rng.uniform(-0.3, 0.3, 2) / span,
                              wave_phase=rng.uniform(0, 2 * np.pi, 3))

    def square(total_travel, size):
        angle = rng.uniform(0, 2 * np.pi)
        v = total_travel * np.array([np.sin(angle), np.cos(angle)]) / span
        mid = 0.5 + rng.uniform(-0.05, 0.05, 2)
        return Square(mid - v * span / 2, v, size, rng.uniform(0.65, 0.95, 3))

    if kind == "moving_square":
        squares = [square(rng.uniform(0.25, 0.35), 0.3)]
    else:
        a = square(rng.uniform(0.45, 0.55), 0.22)
        # second square travels the opposite way on a parallel track
        offset = np.array([-a.velocity[1], a.velocity[0]])
        offset = 0.25 * offset / (np.linalg.norm(offset) + 1e-12)
        b = Square(a.p0 + a.velocity * span + offset, -a.velocity, 0.22, rng.uniform(0.65, 0.95, 3))
        a.p0 = a.p0 - offset
        squares = [a, b]
    return SyntheticScene(kind, bg, squares)


# ------------------------------------------------------------------ clips


@dataclass
class VideoClip:
    frames: list
    frame_rate_tag: str | None = None
    scene: SyntheticScene | None = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataError("a clip needs at least two frames")
        shape = np.shape(self.frames[0])
        for k, f in enumerate(self.frames):
            if np.shape(f) != shape:
                raise DataError(f"frame {k} has shape {np.shape(f)}, expected {shape}")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return np.shape(self.frames[0])


def make_synthetic_clip(kind, length, h, w, seed=0):
    if length < 2:
        raise DataError("synthetic clips need length >= 2")
    scene = make_scene(kind, length, seed)
    return VideoClip([scene.frame(k, h, w) for k in range(length)], frame_rate_tag="synthetic", scene=scene)


def load_frame_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise IngestionError(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if not files:
        raise IngestionError(f"{path} contains no PNG/PPM frames")
    frames = []
    for f in files:
        img = read_frame(f)
        if frames and img.shape != frames[0].shape:
            raise IngestionError(f"{f} has shape {img.shape}, expected {frames[0].shape}")
        frames.append(img)
    if len(frames) < 2:
        raise IngestionError(f"{path} holds a single frame; a clip needs at least two")
    return VideoClip(frames, frame_rate_tag=str(path))


# ------------------------------------------------------------------ windows


@dataclass
class Window:
    start: int
    frames: list

    @property
    def inputs(self):
        return self.frames[0], self.frames[-1]

    def __len__(self):
        return len(self.frames)


def sliding_windows(clip, window=9, stride=1):
    if len(clip) < window:
        raise DataError(f"clip of length {len(clip)} is shorter than the window ({window})")
    if stride < 1:
        raise DataError("stride must be positive")
    return [Window(i, clip.frames[i:i + window]) for i in range(0, len(clip) - window + 1, stride)]


def degrade(frame, scale):
    """Bicubic down-sampling by 1/scale."""
    if scale < 1:
        raise DataError(f"degradation scale must be >= 1, got {scale}")
    try:
        return bicubic_resize(frame, 1.0 / scale)
    except SizeError as exc:
        raise DataError(str(exc)) from exc


# ------------------------------------------------------------------ sampling


@dataclass
class TrainingSample:
    lr0: np.ndarray
    lr1: np.ndarray
    targets: list  # (xt, hr_patch) pairs
    scale: float
    crop_origin: tuple  # HR (row, col)
    window_index: int = 0
    target_indices: tuple = ()
    rotation: int = 0
    flip: bool = False


def augment(img, rotation, flip):
    out = np.rot90(img, rotation, axes=(1, 2))
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def deaugment(img, rotation, flip):
    out = img[:, :, ::-1] if flip else img
    return np.ascontiguousarray(np.rot90(out, -rotation, axes=(1, 2)))


def draw_scale(stage, rng, stage1_scale=4.0, scale_range=(1.0, 4.0)):
    if stage == 1:
        return float(stage1_scale)
    if stage == 2:
        return float(rng.uniform(*scale_range))
    raise DataError(f"stage must be 1 or 2, got {stage}")


def sample_training_batch(windows, stage, batch, rng, patch=32, stage1_scale=4.0, scale_range=(1.0, 4.0),
                          target_pool=None, num_targets=3, augment_data=True):
    """Draw ``batch`` samples sharing one degradation scale.

    The HR crop has side ``round(patch * scale)``; the LR inputs are that crop
    resized to ``patch`` x ``patch``, so both cover exactly the same region.
    """
    if not windows:
        raise DataError("no training windows")
    scale = draw_scale(stage, rng, stage1_scale, scale_range)
    win_len = len(windows[0])
    pool = list(target_pool) if target_pool is not None else list(range(1, win_len - 1))
    hr = int(round(patch * scale))
    samples = []
    for _ in range(batch):
        wi = int(rng.integers(len(windows)))
        win = windows[wi]
        _, H, W = np.shape(win.frames[0])
        if H < hr or W < hr:
            raise DataError(f"frames of {H}x{W} are too small for a {hr}x{hr} crop at scale {scale:.3f}")
        oy = int(rng.integers(0, H - hr + 1))
        ox = int(rng.integers(0, W - hr + 1))

        def crop(f):
            return np.asarray(f)[:, oy:oy + hr, ox:ox + hr]

        lr0 = bicubic_resize(crop(win.frames[0]), out_shape=(patch, patch))
        lr1 = bicubic_resize(crop(win.frames[-1]), out_shape=(patch, patch))
        picks = rng.choice(len(pool), size=min(num_targets, len(pool)), replace=False)
        idx = tuple(int(pool[p]) for p in picks)
        rot = int(rng.integers(4)) if augment_data else 0
        flip = bool(rng.random() < 0.5) if augment_data else False
        targets = [(k / (win_len - 1), augment(crop(win.frames[k]), rot, flip)) for k in idx]
        samples.append(TrainingSample(augment(lr0, rot, flip), augment(lr1, rot, flip), targets, scale,
                                      (oy, ox), wi, idx, rot, flip))
    return samples
