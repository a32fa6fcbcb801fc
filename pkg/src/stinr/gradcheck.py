"""Central finite-difference checks for every differentiable operation."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import encode
from .geometry import FeatureGrid, nearest_cell
from .model import Model, ModelConfig
from .numerics import DenseLayer, Tensor
from .renderer import decode_rgb
from .spatial_inr import query_spatial
from .temporal_inr import query_flow

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    op: str
    param: str
    rel_error: float

    @property
    def ok(self):
        return self.rel_error < TOLERANCE


def rel_error(analytic, numeric):
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(f, arr, h=STEP):
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check(op, loss_fn, tensors):
    """Compare analytic and numeric gradients of ``loss_fn()`` for each named tensor."""
    for t in tensors.values():
        t.grad = None
    nx.backward(loss_fn())
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    out = []
    with nx.no_grad():
        for name, t in tensors.items():
            num = numeric_grad(lambda: float(loss_fn().data), t.data)
            out.append(CheckResult(op, name, rel_error(analytic[name], num)))
    for t in tensors.values():
        t.grad = None
    return out


def _weighted(out, rng):
    w = rng.standard_normal(out.shape)
    return (out * w).sum()


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def op_suites(rng):
    """Yield (op name, loss function, tensors) for the primitive operations."""
    x = _param(rng, 5, 4)
    W = _param(rng, 3, 4)
    b = _param(rng, 3)
    yield "linear", lambda: _weighted(nx.linear(x, W, b), np.random.default_rng(1)), {"x": x, "weight": W, "bias": b}

    s = _param(rng, 4, 6)
    yield "sine", lambda: _weighted(nx.sine(s, 2.5), np.random.default_rng(2)), {"x": s}

    r = Tensor(rng.uniform(0.1, 1.0, (4, 5)) * rng.choice([-1, 1], (4, 5)), requires_grad=True)
    yield "relu", lambda: _weighted(nx.relu(r), np.random.default_rng(3)), {"x": r}

    a, c = _param(rng, 3, 4), _param(rng, 1, 4)
    yield "add", lambda: _weighted(a + c, np.random.default_rng(4)), {"a": a, "b": c}
    yield "mul", lambda: _weighted(a * c, np.random.default_rng(5)), {"a": a, "b": c}
    yield "concat", lambda: _weighted(nx.concat([a, c], axis=0), np.random.default_rng(6)), {"a": a, "b": c}
    yield "getitem", lambda: _weighted(a[:, 1:3], np.random.default_rng(7)), {"x": a}

    cl = Tensor(rng.uniform(-1.5, 1.5, (6, 2)), requires_grad=True)
    cl.data[np.abs(np.abs(cl.data) - 1.0) < 0.05] = 0.5
    yield "clip", lambda: _weighted(nx.clip(cl, -1.0, 1.0), np.random.default_rng(8)), {"x": cl}

    tr = _param(rng, 2, 3, 4)
    yield "transpose", lambda: _weighted(nx.transpose(tr, (2, 0, 1)), np.random.default_rng(9)), {"x": tr}

    cx = _param(rng, 2, 5, 4, 3)
    cw = _param(rng, 3, 3, 3, 2, scale=0.5)
    cb = _param(rng, 2)
    yield "conv2d", lambda: _weighted(nx.conv2d(cx, cw, cb), np.random.default_rng(10)), {"x": cx, "weight": cw, "bias": cb}

    grid = _param(rng, 2, 4, 5, 3)
    coords = Tensor(rng.uniform(-1.3, 1.3, (12, 2)), requires_grad=True)
    bidx = rng.integers(0, 2, 12)
    yield ("bilinear", lambda: _weighted(nx.bilinear_sample(grid, coords, bidx), np.random.default_rng(11)),
           {"grid": grid, "coords": coords})

    rows, cols = rng.integers(0, 4, 7), rng.integers(0, 5, 7)
    gb = rng.integers(0, 2, 7)
    yield "gather", lambda: _weighted(nx.gather_cells(grid, gb, rows, cols), np.random.default_rng(12)), {"grid": grid}

    fg = FeatureGrid(grid)
    q = Tensor(rng.uniform(-0.95, 0.95, (9, 2)), requires_grad=True)
    yield ("nearest_delta", lambda: _weighted(nearest_cell(fg, q, np.zeros(9, dtype=np.int64))[2],
                                              np.random.default_rng(13)), {"coords": q})

    pred = _param(rng, 6, 3)
    target = rng.standard_normal((6, 3))
    yield "charbonnier", lambda: nx.charbonnier(pred, target, 1e-3), {"pred": pred}

    layer = DenseLayer(4, 4, "sine", 30.0, init_bound=0.25, rng=rng)
    dx = _param(rng, 5, 4)
    yield ("dense", lambda: _weighted(layer(dx), np.random.default_rng(14)),
           {"x": dx, "weight": layer.weight, "bias": layer.bias})


def tiny_model_config():
    return ModelConfig(feat_channels=4, num_blocks=1, spatial_channels=4, spatial_hidden=(8, 8, 16),
                       temporal_hidden=(8, 8, 16), decoder_hidden=(8, 8, 16, 16), seed=3)


def model_suites(rng):
    """Module-level and whole-model checks on a very small configuration."""
    I0 = rng.uniform(0, 1, (3, 4, 5))
    I1 = rng.uniform(0, 1, (3, 4, 5))
    xs = rng.uniform(-0.9, 0.9, (6, 2))
    xt = np.repeat([0.3, 0.7], 3)
    target = rng.uniform(0, 1, (6, 3))

    enc_cfg = tiny_model_config()
    enc_model = Model(ModelConfig(feat_channels=4, num_blocks=1, seed=5))
    frames = Tensor(np.concatenate([I0, I1]).transpose(1, 2, 0)[None].copy(), requires_grad=True)
    enc_params = dict(enc_model.encoder.named_parameters("encoder."))
    enc_params["input"] = frames
    yield ("encoder", lambda: _weighted(enc_model.encoder(frames), np.random.default_rng(20)), enc_params)

    model = Model(enc_cfg)
    with nx.no_grad():
        grid_arr = encode(model.encoder, I0, I1).data.data
    grid = FeatureGrid(Tensor(grid_arr.copy(), requires_grad=True))
    sp = dict(model.spatial_inr.named_parameters("spatial_inr."))
    sp["grid"] = grid.data
    yield "spatial_inr", lambda: _weighted(query_spatial(model.spatial_inr, grid, xs), np.random.default_rng(21)), sp

    feat = Tensor(rng.standard_normal((6, enc_cfg.spatial_channels)) * 0.5, requires_grad=True)
    t = Tensor(xt.reshape(-1, 1).copy(), requires_grad=True)
    tp = dict(model.temporal_inr.named_parameters("temporal_inr."))
    tp.update({"spatial_feat": feat, "xt": t})
    yield "temporal_inr", lambda: _weighted(query_flow(model.temporal_inr, feat, t).flows, np.random.default_rng(22)), tp

    # the f / m variants only drop inputs to the decoder, so full and s cover every parameter shape
    for variant in ("full", "s"):
        flags = nx_flags(variant)
        m = Model(ModelConfig(**{**tiny_model_config().__dict__, **flags}))

        def loss(m=m):
            g = encode(m.encoder, I0, I1)
            return nx.charbonnier(decode_rgb(m, g, I0, I1, xs, xt), target, 1e-3)

        yield f"model[{variant}]", loss, m.param_dict()


def nx_flags(variant):
    return {"full": {}, "f": {"use_flow": False}, "m": {"use_multiscale": False},
            "s": {"single_network": True}}[variant]


def run_gradcheck(seed=0, include_model=True):
    """Run every suite; returns (results, seconds)."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    results = []
    for op, fn, tensors in op_suites(rng):
        results += check(op, fn, tensors)
    if include_model:
        for op, fn, tensors in model_suites(rng):
            results += check(op, fn, tensors)
    return results, time.perf_counter() - start


def worst(results):
    """Largest error overall, or among the first (lowest-level) failing op when any fail."""
    failing = [r for r in results if not r.ok]
    if not failing:
        return max(results, key=lambda r: r.rel_error)
    first = failing[0].op
    return max((r for r in failing if r.op == first), key=lambda r: r.rel_error)
