"""Command-line entry point: train, decode, eval, gradcheck, ablate."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import DataError, load_frame_dir, make_synthetic_clip, sliding_windows, SYNTHETIC_KINDS
from .frames_io import IngestionError, read_frame, save_frames
from .metrics import MetricError, evaluate_protocol, format_table, write_report_csv
from .model import AblationFlags, ConfigurationError, Model, ModelConfig
from .numerics import CheckpointError
from .renderer import RenderRequest, UsageError, render_video
from .trainer import NumericalAbort, TrainConfig, model_renderer, run_training

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stinr")


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ config parsing


def _field_types():
    out = {}
    for cls in (TrainConfig, ModelConfig):
        for f in fields(cls):
            out.setdefault(f.name, type(f.default))
    return out


FIELD_TYPES = _field_types()
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
MODEL_KEYS = {f.name for f in fields(ModelConfig)}


def parse_value(key, text):
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise CliError(f"invalid value for {key}: {text!r}") from None
    return text


def read_config_file(path):
    """key=value lines; '#' starts a comment. Keys may use '-' or '_'."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in FIELD_TYPES:
            raise CliError(f"unknown config key: {key}")
        values[key] = parse_value(key, val)
    return values


def split_config(values, tiny=False):
    """Route merged key/values to (TrainConfig, ModelConfig); ``seed`` goes to both."""
    train = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    model = {k: v for k, v in values.items() if k in MODEL_KEYS}
    try:
        tcfg = TrainConfig(**train)
        mcfg = ModelConfig.tiny(**model) if tiny else ModelConfig(**model)
    except (ConfigurationError, TypeError) as exc:
        raise CliError(str(exc)) from None
    return tcfg, mcfg


def parse_times(times, num_frames):
    if times is not None and num_frames is not None:
        raise CliError("give either --times or --num-frames, not both")
    if num_frames is not None:
        if num_frames < 1:
            raise CliError("--num-frames must be positive")
        return tuple(np.linspace(0.0, 1.0, num_frames)) if num_frames > 1 else (0.5,)
    if times is None:
        return (0.0, 0.5, 1.0)
    try:
        return tuple(float(t) for t in times.split(",") if t.strip())
    except ValueError:
        raise CliError(f"invalid --times {times!r}") from None


def parse_region(text):
    if text is None:
        return None
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"invalid --region {text!r}") from None
    if len(vals) != 4:
        raise CliError("--region needs four values x0,y0,x1,y1")
    return vals


# ------------------------------------------------------------------ data


def _clip_from_args(args, kind_default="moving_square"):
    if args.frames is not None:
        return load_frame_dir(args.frames), None
    kind = args.synthetic or kind_default
    if kind not in SYNTHETIC_KINDS:
        raise CliError(f"unknown synthetic kind {kind!r}; choose from {', '.join(SYNTHETIC_KINDS)}")
    seed = args.data_seed
    clip = make_synthetic_clip(kind, args.length, args.height, args.width, seed)
    val = make_synthetic_clip(kind, max(args.length, 9), args.height, args.width, seed + 1)
    return clip, val


def _add_data_args(p, default_kind):
    p.add_argument("--synthetic", choices=SYNTHETIC_KINDS, default=None,
                   help=f"train on a generated clip (default {default_kind})")
    p.add_argument("--frames", type=Path, default=None, help="directory of PNG/PPM frames")
    p.add_argument("--length", type=int, default=9)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--data-seed", type=int, default=1)


# ------------------------------------------------------------------ commands


def cmd_train(args):
    values = read_config_file(args.config) if args.config else {}
    for key in FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = parse_value(key, flag)
    tcfg, mcfg = split_config(values, tiny=args.tiny)
    clip, val = _clip_from_args(args)
    windows = sliding_windows(clip, tcfg.window, 1)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_training(tcfg, mcfg, windows, val if args.validate else None, out)
    print(f"wrote {result.checkpoint} and {out / 'metrics.csv'}")
    return EXIT_OK


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    return Model.load(path)


def _read_input(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"input frame not found: {path}")
    return read_frame(path)


def cmd_decode(args):
    model = _load_model(args.checkpoint)
    I0, I1 = _read_input(args.frame0), _read_input(args.frame1)
    if I0.shape != I1.shape:
        raise CliError(f"input frames differ in shape: {I0.shape} vs {I1.shape}")
    times = parse_times(args.times, args.num_frames)
    req = RenderRequest(space_scale=args.space_scale, times=times, region=parse_region(args.region),
                        allow_extrapolation=args.allow_extrapolation)
    frames = render_video(model, I0, I1, req)
    paths = save_frames(frames, times, args.out_dir, args.format)
    h, w = frames[0].shape[1:]
    print(f"wrote {len(paths)} frames of {h}x{w} to {args.out_dir}")
    return EXIT_OK


def ground_truth_stub(clip, window=9):
    """Renderer returning the true frames of each successive evaluation group."""
    groups = iter(sliding_windows(clip, window, window))

    def render(I0, I1, times, out_shape):
        win = next(groups)
        return [win.frames[int(round(t * (window - 1)))] for t in times]

    return render


def cmd_eval(args):
    clip = load_frame_dir(args.frames_dir)
    if len(clip) < 9:
        raise CliError(f"clip of length {len(clip)} is shorter than one 9-frame group")
    if args.checkpoint == "ground-truth":
        renderer = ground_truth_stub(clip)
    else:
        renderer = model_renderer(_load_model(args.checkpoint))
    p, s = evaluate_protocol(renderer, clip, args.mode, args.space_scale, literal_center=args.literal_center)
    row = {"mode": args.mode, "scale": args.space_scale, "psnr": p, "ssim": s}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv([row], out / "eval_report.csv")
    print(format_table([row], columns=("mode", "scale", "psnr", "ssim")))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_gradcheck, worst

    if args.inject_fault:
        nx.FAULTS.add(args.inject_fault)
    try:
        results, secs = run_gradcheck(seed=args.seed)
    finally:
        nx.FAULTS.discard(args.inject_fault)
    failed = [r for r in results if not r.ok]
    w = worst(results)
    print(f"{len(results)} gradient checks in {secs:.1f}s, tolerance {TOLERANCE:g}")
    if failed:
        for r in sorted(failed, key=lambda r: -r.rel_error):
            print(f"FAIL {r.op} {r.param} rel_error={r.rel_error:.3e}")
        print(f"worst offender: op={w.op} parameter={w.param} rel_error={w.rel_error:.3e}")
        return EXIT_CHECK
    print(f"all passed; largest rel_error {w.rel_error:.3e} ({w.op} {w.param})")
    return EXIT_OK


def parse_variants(text):
    names = [v.strip().lstrip("-") for v in text.split(",") if v.strip()]
    for v in names:
        if v == "full":
            continue
        try:
            AblationFlags.from_variant(v)
        except ConfigurationError:
            raise CliError(f"unknown ablation variant {v!r}; choose from f, m, s") from None
    return [v for v in names if v != "full"]


def ablation_rows(variants, clip, tcfg, mcfg, mode="average", out_dir=None):
    """Train the full model and each variant identically; one row per model."""
    windows = sliding_windows(clip, tcfg.window, 1)
    rows = []
    for v in ["full"] + list(variants):
        flags = AblationFlags.from_variant(v)
        cfg = ModelConfig(**{**mcfg.to_dict(), "use_flow": flags.use_flow, "use_multiscale": flags.use_multiscale,
                             "single_network": flags.single_network})
        sub = Path(out_dir) / v if out_dir is not None else None
        res = run_training(tcfg, cfg, windows, None, sub)
        p, s = evaluate_protocol(model_renderer(res.model), clip, mode, tcfg.stage1_scale)
        rows.append({"method": "full" if v == "full" else f"-{v}", "scale": tcfg.stage1_scale, "psnr": p,
                     "ssim": s})
    return rows


def cmd_ablate(args):
    variants = parse_variants(args.variants)
    values = {"stage1_iters": args.iters, "stage2_iters": 0, "seed": args.seed}
    values.update(desk_values(args))
    tcfg, mcfg = split_config(values, tiny=not args.full_size)
    clip, _ = _clip_from_args(args, "two_squares")
    rows = ablation_rows(variants, clip, tcfg, mcfg, out_dir=args.out_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv([{"mode": "average", **r} for r in rows], out / "ablation.csv")
    print(format_table(rows))
    return EXIT_OK


def desk_values(args):
    return {"batch": args.batch, "lr_max": args.lr_max, "cosine_period": max(args.iters, 1),
            "stage1_scale": args.scale, "sample_queries": args.sample_queries, "augment": False,
            "eval_every": max(args.iters, 1), "dtype": "float32"}


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="stinr", description=__doc__, allow_abbrev=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model", allow_abbrev=False)
    t.add_argument("--config", type=Path, help="key=value file; flags override it")
    t.add_argument("--tiny", action="store_true", help="start from the small desk-scale model")
    t.add_argument("--out-dir", default="out")
    t.add_argument("--no-validate", dest="validate", action="store_false",
                   help="skip the held-out clip evaluation at checkpoints")
    _add_data_args(t, "moving_square")
    for key in FIELD_TYPES:
        t.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="render frames from two inputs", allow_abbrev=False)
    d.add_argument("checkpoint")
    d.add_argument("frame0")
    d.add_argument("frame1")
    d.add_argument("--space-scale", type=float, default=4.0)
    d.add_argument("--times", default=None, help="comma list of times in [0, 1]")
    d.add_argument("--num-frames", type=int, default=None, help="K uniform times in [0, 1]")
    d.add_argument("--region", default=None, help="x0,y0,x1,y1 as frame fractions")
    d.add_argument("--allow-extrapolation", action="store_true")
    d.add_argument("--format", choices=("png", "ppm"), default="png")
    d.add_argument("--out-dir", default="out")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="center/average protocol on a frame directory", allow_abbrev=False)
    e.add_argument("checkpoint", help="checkpoint path, or 'ground-truth' for the reference stub")
    e.add_argument("frames_dir", type=Path)
    e.add_argument("--mode", choices=("center", "average"), default="center")
    e.add_argument("--space-scale", type=float, default=4.0)
    e.add_argument("--literal-center", action="store_true", help="use the 4th frame as the center frame")
    e.add_argument("--out-dir", default="out")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks", allow_abbrev=False)
    g.add_argument("--tiny", action="store_true", help="accepted for compatibility; the check always uses a tiny model")
    g.add_argument("--inject-fault", default=None, metavar="OP", help="test hook: corrupt an op's backward")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", default="out")
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train the full model and ablated variants", allow_abbrev=False)
    a.add_argument("--variants", default="f,m,s")
    a.add_argument("--iters", type=int, default=3000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--batch", type=int, default=2)
    a.add_argument("--lr-max", type=float, default=5e-4)
    a.add_argument("--scale", type=float, default=2.0)
    a.add_argument("--sample-queries", type=int, default=512)
    a.add_argument("--full-size", action="store_true", help="use the full-width model instead of the tiny one")
    a.add_argument("--out-dir", default="out")
    _add_data_args(a, "two_squares")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, DataError, IngestionError, CheckpointError, UsageError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
