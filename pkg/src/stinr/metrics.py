"""PSNR / SSIM and the Center / Average evaluation protocol."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import degrade, sliding_windows

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


class MetricError(ValueError):
    pass


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10 log10(1 / MSE) over all channels, capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def to_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return np.tensordot(LUMA, img, axes=(0, 0))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b):
    """Mean SSIM of the Rec.601 luma over all fully-contained 11x11 Gaussian windows."""
    a, b = _check_pair(a, b)
    ya, yb = to_luma(a), to_luma(b)
    if ya.shape[0] < SSIM_WINDOW or ya.shape[1] < SSIM_WINDOW:
        raise MetricError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ya.shape}")
    g = gaussian_window()
    c1, c2 = K1 ** 2, K2 ** 2
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    saa = _filter_valid(ya * ya, g) - mu_a ** 2
    sbb = _filter_valid(yb * yb, g) - mu_b ** 2
    sab = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def protocol_frames(mode, window=9, literal_center=False):
    """Window positions evaluated by each protocol mode."""
    if mode == "center":
        mid = 3 if literal_center else (window - 1) // 2
        return [0, mid, window - 1]
    if mode == "average":
        return list(range(window))
    raise MetricError(f"unknown protocol mode {mode!r}")


def evaluate_protocol(model, clip, mode="center", scale=4.0, times=None, window=9, literal_center=False,
                      details=False):
    """Mean PSNR/SSIM over consecutive ``window``-frame groups of ``clip``.

    ``model(I0, I1, times, out_shape)`` returns one [3, H, W] frame per time
    from the degraded first and last frames of each group. ``times`` overrides
    the protocol's frame set (given as window positions / (window - 1)).
    """
    if len(clip) < window:
        raise MetricError(f"clip of length {len(clip)} is shorter than one {window}-frame group")
    positions = protocol_frames(mode, window, literal_center)
    xts = list(times) if times is not None else [p / (window - 1) for p in positions]
    rows = []
    for win in sliding_windows(clip, window, window):
        hr0, hr1 = win.inputs
        out_shape = np.shape(hr0)[1:]
        I0, I1 = (hr0, hr1) if scale == 1 else (degrade(hr0, scale), degrade(hr1, scale))
        preds = model(I0, I1, xts, out_shape)
        for xt, pred in zip(xts, preds):
            k = int(round(xt * (window - 1)))
            gt = win.frames[k]
            rows.append((win.start, xt, psnr(pred, gt), ssim(pred, gt)))
    p = float(np.mean([r[2] for r in rows]))
    s = float(np.mean([r[3] for r in rows]))
    if details:
        return p, s, rows
    return p, s


REPORT_HEADER = ["mode", "scale", "psnr", "ssim"]


def write_report_csv(rows, path):
    """Rows are dicts with the REPORT_HEADER keys (extra keys are kept as extra columns)."""
    path = Path(path)
    keys = list(REPORT_HEADER) + [k for k in rows[0] if k not in REPORT_HEADER] if rows else REPORT_HEADER
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def format_table(rows, columns=("method", "scale", "psnr", "ssim")):
    """Aligned text table, one row per method / setting."""
    cells = [[str(c) for c in columns]]
    for r in rows:
        line = []
        for c in columns:
            v = r.get(c, "")
            line.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        cells.append(line)
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    out = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    out.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(out)
