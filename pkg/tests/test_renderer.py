import itertools

import numpy as np
import pytest

from stinr.geometry import FeatureGrid, bilinear_sample, lattice_centers, normalize_index
from stinr.model import ConfigurationError, Model, ModelConfig, content_dim, decoder_in_dim
from stinr.numerics import DenseLayer, Tensor
from stinr.renderer import (RenderRequest, UsageError, decode_rgb, encode_pair, render_video, spacetime_feature,
                            synthesize_frame, synthesize_frame_per_coordinate)
from stinr.spatial_inr import query_spatial


def small_cfg(**kw):
    base = dict(feat_channels=4, num_blocks=1, spatial_channels=4, spatial_hidden=(8, 8, 16),
                temporal_hidden=(8, 8, 16), decoder_hidden=(8, 8, 16, 16), seed=1)
    base.update(kw)
    return ModelConfig(**base)


def inputs(h=4, w=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (3, h, w)), rng.uniform(0, 1, (3, h, w))


def zero_out(module):
    for p in module.parameters():
        p.data[:] = 0


def test_zero_flow_collapses_branches():
    m = Model(small_cfg())
    zero_out(m.temporal_inr)
    I0, I1 = inputs()
    g = encode_pair(m, I0, I1)
    xs = np.random.default_rng(1).uniform(-0.9, 0.9, (6, 2))
    out = spacetime_feature(m, g, xs, 0.4).data
    fs = query_spatial(m.spatial_inr, g, xs).data
    np.testing.assert_array_equal(out, np.concatenate([fs, fs], axis=1))


def test_warp_onto_center_equals_query_there():
    m = Model(small_cfg())
    I0, I1 = inputs()
    g = encode_pair(m, I0, I1)
    xs = np.array([[0.13, -0.41]])
    target = np.array([[normalize_index(2, 4), normalize_index(1, 5)]])
    override = lambda x, t: np.concatenate([target - x, target - x], axis=1)  # noqa: E731
    out = spacetime_feature(m, g, xs, 0.5, flow_override=override).data
    np.testing.assert_array_equal(out[:, :4], query_spatial(m.spatial_inr, g, target).data)


def mirror_flows(xs, xt):
    # lattice-aligned: each output centre maps onto another output centre
    return np.concatenate([-2.0 * xs, np.stack([np.zeros(len(xs)), -2.0 * xs[:, 1]], axis=1)], axis=1)


def test_paths_agree_exactly_under_lattice_flows():
    m = Model(small_cfg())
    I0, I1 = inputs()
    g = encode_pair(m, I0, I1)
    a = synthesize_frame(m, g, I0, I1, 8, 8, 0.5, flow_override=mirror_flows)
    b = synthesize_frame_per_coordinate(m, g, I0, I1, 8, 8, 0.5, flow_override=mirror_flows)
    assert np.abs(a - b).mean() < 1e-12


def test_paths_close_untrained():
    m = Model(small_cfg())
    I0, I1 = inputs()
    g = encode_pair(m, I0, I1)
    a = synthesize_frame(m, g, I0, I1, 8, 8, 0.3)
    b = synthesize_frame_per_coordinate(m, g, I0, I1, 8, 8, 0.3)
    assert a.shape == b.shape == (3, 8, 8)
    assert np.abs(a - b).mean() < 1e-2


def test_decoder_zero_weights_bias_half():
    m = Model(small_cfg())
    zero_out(m.decoder)
    m.decoder.layers[-1].bias.data[:] = 0.5
    I0, I1 = inputs()
    frames = render_video(m, I0, I1, RenderRequest(space_scale=2, times=(0.0, 0.7)))
    for f in frames:
        assert np.array_equal(f, np.full((3, 8, 10), 0.5))


def test_multiscale_flag_changes_decoder_width():
    full, no_ms = small_cfg(), small_cfg(use_multiscale=False)
    assert decoder_in_dim(full) == 2 * 4 + 4 + 6
    assert decoder_in_dim(no_ms) == 2 * 4


@pytest.mark.parametrize("flow,ms,single,nf", list(itertools.product([True, False], [True, False],
                                                                      [True, False], [1, 2])))
def test_every_flag_combination_decodes(flow, ms, single, nf):
    cfg = small_cfg(use_flow=flow, use_multiscale=ms, single_network=single, num_flows=nf)
    m = Model(cfg)
    assert m.decoder.in_dim == content_dim(cfg) + (cfg.feat_channels + 6) * ms
    I0, I1 = inputs()
    g = encode_pair(m, I0, I1)
    out = decode_rgb(m, g, I0, I1, np.random.default_rng(2).uniform(-1, 1, (5, 2)), 0.5)
    assert out.shape == (5, 3)
    img = synthesize_frame(m, g, I0, I1, 6, 7, 0.5)
    assert img.shape == (3, 6, 7)


def test_decoder_width_mismatch_is_configuration_error():
    m = Model(small_cfg())
    m.cfg.use_multiscale = False
    I0, I1 = inputs()
    with pytest.raises(ConfigurationError):
        decode_rgb(m, encode_pair(m, I0, I1), I0, I1, np.zeros((2, 2)), 0.5)


def test_no_flow_identity_stub_reproduces_bilinear_features():
    cfg = small_cfg(use_flow=False)
    m = Model(cfg)
    stub = DenseLayer(m.decoder_in_dim, 3, "none")
    stub.weight.data[:] = 0
    stub.bias.data[:] = 0
    first = content_dim(cfg)  # encoder-feature block starts after the content part
    stub.weight.data[np.arange(3), first + np.arange(3)] = 1
    m.decoder.layers = [stub]
    I0, I1 = inputs()
    g = encode_pair(m, I0, I1)
    img = synthesize_frame(m, g, I0, I1, 4, 5, 0.5)
    ref = bilinear_sample(g, lattice_centers(4, 5)).data[:, :3].T.reshape(3, 4, 5)
    np.testing.assert_allclose(img, ref, atol=1e-12)


def test_synthesize_double_size_shape():
    m = Model(small_cfg())
    I0, I1 = inputs(4, 5)
    assert synthesize_frame(m, encode_pair(m, I0, I1), I0, I1, 8, 10, 0.5).shape == (3, 8, 10)


def test_render_video_contract():
    m = Model(small_cfg())
    I0, I1 = inputs(3, 4)
    frames = render_video(m, I0, I1, RenderRequest(space_scale=4, times=(0.0, 0.5, 1.0)))
    assert len(frames) == 3 and all(f.shape == (3, 12, 16) for f in frames)
    assert all(f.min() >= 0 and f.max() <= 1 for f in frames)
    uneven = render_video(m, I0, I1, RenderRequest(space_scale=1.5, times=(0.1, 0.15, 0.9)))
    assert len(uneven) == 3 and uneven[0].shape == (3, 4, 6)


@pytest.mark.parametrize("region", [(0, 0, 0.5, 1), (0, 0, 0.5, 0.5), (0.25, 0.4, 0.9, 0.8)])
def test_region_matches_crop(region):
    m = Model(small_cfg(seed=3))
    I0, I1 = inputs(4, 6, 4)
    full = render_video(m, I0, I1, RenderRequest(space_scale=2, times=(0.3,)))[0]
    part = render_video(m, I0, I1, RenderRequest(space_scale=2, times=(0.3,), region=region))[0]
    H, W = full.shape[1:]
    rows = [i for i in range(H) if region[1] <= (i + 0.5) / H < region[3]]
    cols = [j for j in range(W) if region[0] <= (j + 0.5) / W < region[2]]
    crop = full[:, rows][:, :, cols]
    assert part.shape == crop.shape
    assert np.abs(part - crop).max() < 1e-6


def test_left_half_width():
    m = Model(small_cfg())
    I0, I1 = inputs(4, 6)
    part = render_video(m, I0, I1, RenderRequest(space_scale=2, times=(0.5,), region=(0, 0, 0.5, 1)))[0]
    assert part.shape == (3, 8, 6)


@pytest.mark.parametrize("kw", [{"times": ()}, {"times": (0.5, 0.2)}, {"times": (1.5,)},
                                {"region": (0.5, 0, 0.5, 1)}, {"space_scale": 0.5}])
def test_render_request_validation(kw):
    with pytest.raises(UsageError):
        RenderRequest(**kw)


def test_extrapolation_needs_flag():
    RenderRequest(times=(-0.2, 1.3), allow_extrapolation=True)


def test_high_scale_decode():
    m = Model(small_cfg())
    I0, I1 = inputs(3, 3)
    out = render_video(m, I0, I1, RenderRequest(space_scale=12, times=(0.5,)))[0]
    assert out.shape == (3, 36, 36)
