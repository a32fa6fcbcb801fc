"""8-bit PNG and binary PPM (P6) frame files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class IngestionError(IOError):
    pass


def to_uint8(img):
    """[3, H, W] floats -> [H, W, 3] bytes via round(clamp(v, 0, 1) * 255)."""
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path, img):
    data = to_uint8(img)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _ppm_tokens(raw):
    tokens, pos = [], 2
    while len(tokens) < 3:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    return tokens, pos + 1


def read_ppm(path):
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise IngestionError(f"{path}: not a binary PPM (P6) file")
    (w, h, maxval), start = _ppm_tokens(raw)
    if maxval != 255:
        raise IngestionError(f"{path}: only 8-bit PPM is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=start).reshape(h, w, 3)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_png(path, img):
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def read_frame(path):
    path = Path(path)
    try:
        if path.suffix.lower() == ".ppm":
            return read_ppm(path)
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return arr.transpose(2, 0, 1)
    except IngestionError:
        raise
    except Exception as exc:
        raise IngestionError(f"cannot read frame {path}: {exc}") from exc


def frame_filename(index, time, ext="png"):
    return f"frame_{index:04}_t{time:.4}.{ext}"


def save_frames(frames, times, out_dir, fmt="png"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = write_png if fmt == "png" else write_ppm
    paths = []
    for i, (img, t) in enumerate(zip(frames, times)):
        p = out_dir / frame_filename(i, t, fmt)
        writer(p, img)
        paths.append(p)
    return paths
