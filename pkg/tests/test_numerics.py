import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stinr import numerics as nx
from stinr.gradcheck import numeric_grad, rel_error
from stinr.numerics import (AdamState, CheckpointError, DenseLayer, DimensionError, Siren, Tensor, TrainingError,
                            adam_step, backward, charbonnier_loss, cosine_lr, dense_forward, load_checkpoint,
                            save_checkpoint)


def fd_check(loss_fn, *tensors):
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    with nx.no_grad():
        for t in tensors:
            num = numeric_grad(lambda: float(loss_fn().data), t.data)
            assert rel_error(t.grad, num) < 1e-4


# ---------------------------------------------------------------- dense layers


def test_zero_weight_gives_bias_rows():
    layer = DenseLayer(5, 3, "none", rng=np.random.default_rng(0))
    layer.weight.data[:] = 0
    x = Tensor(np.random.default_rng(1).standard_normal((4, 5)))
    out = dense_forward(layer, x).data
    assert np.array_equal(out, np.tile(layer.bias.data, (4, 1)))


def test_identity_sine_at_zero():
    layer = DenseLayer(3, 3, "sine", 1.0)
    layer.weight.data[:] = np.eye(3)
    layer.bias.data[:] = 0
    assert np.array_equal(layer(Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))


def test_sine_layer_formula():
    rng = np.random.default_rng(2)
    layer = DenseLayer(4, 6, "sine", 30.0, init_bound=0.25, rng=rng)
    x = rng.standard_normal((3, 4))
    expect = np.sin(30.0 * (x @ layer.weight.data.T + layer.bias.data))
    np.testing.assert_allclose(layer(Tensor(x)).data, expect, rtol=1e-12, atol=1e-12)


def test_dense_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    layer = DenseLayer(4, 4, "sine", 2.0, rng=rng)
    x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    w = rng.standard_normal((5, 4))
    fd_check(lambda: (layer(x) * w).sum(), x, layer.weight, layer.bias)


def test_dense_shape_error_names_both_shapes():
    layer = DenseLayer(4, 2)
    with pytest.raises(DimensionError, match=r"\(3, 5\).*\(2, 4\)"):
        layer(Tensor(np.zeros((3, 5))))


def test_siren_init_bounds():
    rng = np.random.default_rng(4)
    net = Siren(10, (32, 64), 3, hidden_omega=1.0, rng=rng)
    first, hidden, out = net.layers
    assert first.frequency == 30.0 and np.abs(first.weight.data).max() <= 1 / 10
    assert hidden.frequency == 1.0 and np.abs(hidden.weight.data).max() <= math.sqrt(6 / 32)
    assert out.activation == "none" and np.abs(out.weight.data).max() <= math.sqrt(6 / 64) / 30


def test_linear_is_batch_invariant():
    rng = np.random.default_rng(5)
    W = Tensor(rng.standard_normal((7, 9)))
    x = rng.standard_normal((6, 9))
    full = nx.linear(Tensor(x), W).data
    rows = np.concatenate([nx.linear(Tensor(x[i:i + 1]), W).data for i in range(6)])
    assert np.array_equal(full, rows)


# ---------------------------------------------------------------- backward


def test_backward_sum():
    x = Tensor(np.zeros(3), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward((x * x).sum())
    assert np.array_equal(x.grad, [2, 4])


def test_backward_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward(x.sum())
    backward(x.sum())
    assert np.array_equal(x.grad, [2, 2])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_backward_needs_grad_input():
    with pytest.raises(ValueError):
        backward(Tensor(np.ones(3)).sum())


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with nx.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_shared_subexpression_gradient():
    x = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    fd_check(lambda: ((x * x) * (x * x) + nx.sine(x, 3.0)).sum(), x)


@pytest.mark.parametrize("op", ["add", "mul", "concat"])
def test_broadcast_ops_gradients(op):
    rng = np.random.default_rng(6)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
    w = rng.standard_normal((4, 4) if op == "concat" else (3, 4))
    fn = {"add": lambda: a + b, "mul": lambda: a * b, "concat": lambda: nx.concat([a, b], axis=0)}[op]
    fd_check(lambda: (fn() * w).sum(), a, b)


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 5, 6, 2))
    w = rng.standard_normal((3, 3, 2, 4))
    b = rng.standard_normal(4)
    out = nx.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 6, 4))
    for i in range(5):
        for j in range(6):
            ref[0, i, j] = np.einsum("abc,abcd->d", pad[0, i:i + 3, j:j + 3], w) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------- charbonnier


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_charbonnier_identical_is_eps(values):
    x = np.array(values)
    assert float(charbonnier_loss(Tensor(x), x, 1e-3).data) == 1e-3


def test_charbonnier_single_value():
    out = float(charbonnier_loss(Tensor(np.array([3.0])), np.array([0.0])).data)
    assert out == pytest.approx(math.sqrt(9 + 1e-6), abs=1e-12)
    assert out == pytest.approx(3.00000017, abs=1e-8)


def test_charbonnier_zero_gradient_at_match():
    p = Tensor(np.array([0.5, 0.1]), requires_grad=True)
    backward(charbonnier_loss(p, p.data.copy()))
    assert np.array_equal(p.grad, [0.0, 0.0])


def test_charbonnier_shape_mismatch():
    with pytest.raises(DimensionError):
        charbonnier_loss(Tensor(np.zeros(3)), np.zeros(4))


# ---------------------------------------------------------------- adam and schedule


def test_adam_zero_grads_no_op():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState(step=5, m={"w": np.array([0.3, 0.1])}, v={"w": np.array([0.2, 0.2])})
    adam_step(p, {"w": np.zeros(2)}, state, 0.1)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_fresh_zero_grads():
    p = {"w": np.array([3.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(1)}, state, 0.1)
    assert p["w"][0] == 3.0
    assert state.step == 1


def test_adam_converges_on_quadratic():
    p = {"p": np.array([0.0])}
    state = AdamState()
    for _ in range(500):
        adam_step(p, {"p": 2 * (p["p"] - 2.0)}, state, 0.1)
    assert abs(p["p"][0] - 2.0) < 1e-3


def test_adam_first_step_is_lr_sign():
    p = {"p": np.array([1.0, 1.0])}
    adam_step(p, {"p": np.array([0.5, -4.0])}, AdamState(), 0.01)
    np.testing.assert_allclose(p["p"], [0.99, 1.01], atol=1e-7)


def test_adam_non_finite_names_parameter():
    with pytest.raises(TrainingError, match="decoder.w"):
        adam_step({"decoder.w": np.ones(2)}, {"decoder.w": np.array([1.0, np.nan])}, AdamState(), 0.1)


def test_cosine_lr_points():
    assert cosine_lr(0, 1000, 1e-4, 1e-7) == 1e-4
    assert cosine_lr(1000, 1000, 1e-4, 1e-7) == 1e-4
    assert cosine_lr(500, 1000, 1e-4, 1e-7) == pytest.approx((1e-4 + 1e-7) / 2, rel=1e-12)


def test_cosine_lr_monotone():
    lrs = [cosine_lr(i, 100, 1e-3, 1e-6) for i in range(101)]
    assert all(b <= a for a, b in zip(lrs[:100], lrs[1:100]))


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    arrays = {"encoder.head.weight": rng.standard_normal((3, 3, 6, 4)), "b": rng.standard_normal(7)}
    path = save_checkpoint(tmp_path / "c.ckpt", arrays, {"model": {"a": 1}}, {"iteration": 3})
    back, config, meta = load_checkpoint(path)
    assert config == {"model": {"a": 1}} and meta == {"iteration": 3}
    for k, v in arrays.items():
        assert back[k].tobytes() == v.tobytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_truncated(tmp_path):
    p = save_checkpoint(tmp_path / "c.ckpt", {"a": np.ones(100)}, {}, {})
    p.write_bytes(p.read_bytes()[:-40])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
