"""Whole-network construction, forward/backward, and the model file format."""

import numpy as np
import pytest

from conftest import finite_difference, max_rel_err
from dncnn.errors import FormatError, ShapeError, UsageError
from dncnn.model import (
    Model,
    NetworkSpec,
    backward,
    build_network,
    denoise,
    forward,
    grad_arrays,
    load_model,
    parameter_count,
    receptive_field,
    save_model,
    trainable_arrays,
)
from dncnn.rng import SeededRng


def small_model(depth=3, hidden=4, channels=1, bn=True, residual=True,
                seed=0, precision="single"):
    spec = NetworkSpec(depth, hidden, channels, use_bn=bn, use_residual=residual)
    return build_network(spec, SeededRng(seed), precision=precision)


def test_receptive_field_values():
    assert receptive_field(17) == 35
    assert receptive_field(20) == 41
    assert receptive_field(1) == 3
    with pytest.raises(ValueError):
        receptive_field(0)


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(depth=1)
    with pytest.raises(ValueError):
        NetworkSpec(depth=3, hidden_channels=0)
    with pytest.raises(ValueError):
        NetworkSpec(depth=3, image_channels=2)


def test_build_layer_plan():
    model = small_model(depth=5, hidden=8, channels=3)
    layers = model.layers
    assert len(layers) == 5
    assert layers[0].conv.weights.shape == (8, 3, 3, 3)
    assert layers[0].conv.bias is not None and layers[0].bn is None
    for mid in layers[1:-1]:
        assert mid.conv.weights.shape == (8, 8, 3, 3)
        assert mid.conv.bias is None
        assert mid.bn is not None
        assert np.all(mid.bn.gamma == 1.0) and np.all(mid.bn.beta == 0.0)
        assert np.all(mid.bn.running_mean == 0.0) and np.all(mid.bn.running_var == 1.0)
    assert layers[-1].conv.weights.shape == (3, 8, 3, 3)
    assert layers[-1].conv.bias is not None and layers[-1].bn is None


def test_build_without_bn_keeps_bias_everywhere():
    model = small_model(depth=4, bn=False)
    assert all(layer.bn is None for layer in model.layers)
    assert all(layer.conv.bias is not None for layer in model.layers)


def test_build_is_deterministic():
    a = small_model(seed=42)
    b = small_model(seed=42)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.conv.weights, lb.conv.weights)
    c = small_model(seed=43)
    assert not np.array_equal(a.layers[0].conv.weights, c.layers[0].conv.weights)


def test_parameter_count_grayscale_depth17():
    model = small_model(depth=17, hidden=64, channels=1)
    expected = (64 * 1 * 9 + 64) + 15 * (64 * 64 * 9) + 15 * (2 * 64) + (1 * 64 * 9 + 1)
    assert parameter_count(model) == expected


def test_parameter_count_no_bn_counts_bias():
    model = small_model(depth=3, hidden=4, channels=1, bn=False)
    expected = (4 * 9 + 4) + (4 * 4 * 9 + 4) + (4 * 9 + 1)
    assert parameter_count(model) == expected


def test_forward_preserves_shape_at_depth17():
    model = small_model(depth=17, hidden=64, channels=1)
    x = np.random.default_rng(0).random((2, 1, 40, 40), dtype=np.float32)
    out, tape, same = forward(model, x, mode="infer")
    assert out.shape == x.shape
    assert tape.entries == [] and tape.mode == "infer"
    assert same is model


def test_forward_rejects_wrong_channels():
    model = small_model(channels=1)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 3, 8, 8), dtype=np.float32))
    with pytest.raises(ShapeError):
        forward(model, np.zeros((3, 8, 8), dtype=np.float32))


def test_forward_infer_is_pure():
    model = small_model()
    x = np.random.default_rng(1).random((1, 1, 12, 12), dtype=np.float32)
    before = [layer.bn.running_mean.copy() for layer in model.layers if layer.bn]
    a, _, _ = forward(model, x, mode="infer")
    b, _, _ = forward(model, x, mode="infer")
    assert np.array_equal(a, b)
    after = [layer.bn.running_mean for layer in model.layers if layer.bn]
    for m0, m1 in zip(before, after):
        assert np.array_equal(m0, m1)


def test_forward_train_returns_updated_bn_stats():
    model = small_model()
    x = np.random.default_rng(2).normal(size=(4, 1, 10, 10)).astype(np.float32)
    _, tape, updated = forward(model, x, mode="train")
    assert tape.mode == "train" and len(tape.entries) == len(model.layers)
    assert updated is not model
    moved = [
        not np.array_equal(old.bn.running_mean, new.bn.running_mean)
        for old, new in zip(model.layers, updated.layers)
        if old.bn is not None
    ]
    assert any(moved)
    # originals untouched
    for layer in model.layers:
        if layer.bn is not None:
            assert np.all(layer.bn.running_mean == 0.0)


def test_zeroed_model_denoise_is_identity_in_residual_mode():
    model = small_model(residual=True)
    for _, owner, name, kind in trainable_arrays(model):
        getattr(owner, name)[...] = 0.0
    x = np.random.default_rng(3).random((1, 1, 9, 9), dtype=np.float32)
    assert np.array_equal(denoise(model, x), x)


def test_direct_mode_denoise_returns_network_output():
    model = small_model(residual=False)
    x = np.random.default_rng(4).random((1, 1, 9, 9), dtype=np.float32)
    out, _, _ = forward(model, x, mode="infer")
    assert np.array_equal(denoise(model, x), out)


def test_residual_mode_denoise_is_input_minus_output():
    model = small_model(residual=True)
    x = np.random.default_rng(5).random((1, 1, 9, 9), dtype=np.float32)
    out, _, _ = forward(model, x, mode="infer")
    assert np.array_equal(denoise(model, x), x - out)


def test_translation_equivariance_in_the_interior():
    depth = 3
    model = small_model(depth=depth, hidden=6)
    rng = np.random.default_rng(6)
    big = rng.random((1, 1, 25, 25), dtype=np.float32)
    xa = big[:, :, :24, :24]
    xb = big[:, :, 1:, 1:]
    oa, _, _ = forward(model, xa, mode="infer")
    ob, _, _ = forward(model, xb, mode="infer")
    m = depth + 1
    inner_a = oa[:, :, m:-m, m:-m]
    inner_b = ob[:, :, m - 1 : -(m + 1), m - 1 : -(m + 1)]
    assert np.max(np.abs(inner_a - inner_b)) < 1e-5


@pytest.mark.parametrize("bn,residual", [(True, True), (True, False), (False, True)])
def test_full_network_gradients_match_finite_differences(bn, residual):
    spec = NetworkSpec(3, 4, 1, use_bn=bn, use_residual=residual)
    model = build_network(spec, SeededRng(9), precision="double")
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 1, 6, 6))
    co = rng.normal(size=(2, 1, 6, 6))

    def loss():
        out, _, _ = forward(model, x, mode="train")
        return float(np.sum(out * co))

    out, tape, _ = forward(model, x, mode="train")
    grads = backward(model, tape, co)
    params = [getattr(owner, name) for _, owner, name, _ in trainable_arrays(model)]
    analytic = list(grad_arrays(grads))
    assert len(params) == len(analytic)
    for p, g in zip(params, analytic):
        assert max_rel_err(g, finite_difference(loss, p)) < 1e-5


def test_backward_rejects_infer_tape():
    model = small_model()
    x = np.random.default_rng(11).random((1, 1, 8, 8), dtype=np.float32)
    out, tape, _ = forward(model, x, mode="infer")
    with pytest.raises(UsageError):
        backward(model, tape, out)


def test_backward_rejects_foreign_tape():
    model = small_model(depth=3)
    other = small_model(depth=4)
    x = np.random.default_rng(12).normal(size=(2, 1, 8, 8)).astype(np.float32)
    _, tape, _ = forward(model, x, mode="train")
    with pytest.raises(UsageError):
        backward(other, tape, x)


def test_save_load_round_trip_bitwise(tmp_path):
    model = small_model(depth=4, hidden=5, channels=3, seed=21)
    # push the running stats off their init so they get exercised too
    x = np.random.default_rng(13).normal(size=(2, 3, 8, 8)).astype(np.float32)
    _, _, model = forward(model, x, mode="train")
    p1 = tmp_path / "a.dncnn"
    p2 = tmp_path / "b.dncnn"
    save_model(model, p1)
    loaded = load_model(p1)
    assert loaded.spec == model.spec
    save_model(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    y = np.random.default_rng(14).random((1, 3, 10, 10), dtype=np.float32)
    assert np.array_equal(denoise(model, y), denoise(loaded, y))


def test_save_load_without_bn(tmp_path):
    model = small_model(depth=3, bn=False, seed=5)
    path = tmp_path / "m.dncnn"
    save_model(model, path)
    loaded = load_model(path)
    assert all(layer.bn is None for layer in loaded.layers)
    x = np.random.default_rng(15).random((1, 1, 8, 8), dtype=np.float32)
    assert np.array_equal(denoise(model, x), denoise(loaded, x))


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "m.dncnn"
    model = small_model()
    save_model(model, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset == 0


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "m.dncnn"
    save_model(small_model(), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (999).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset == 4


def test_load_rejects_truncation_with_offset(tmp_path):
    path = tmp_path / "m.dncnn"
    save_model(small_model(), path)
    raw = path.read_bytes()
    cut = len(raw) - 7
    path.write_bytes(raw[:cut])
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset is not None
    assert err.value.offset <= cut


def test_load_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "m.dncnn"
    save_model(small_model(), path)
    raw = path.read_bytes()
    path.write_bytes(raw + b"\x00")
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset == len(raw)


def test_load_rejects_invalid_header_fields(tmp_path):
    path = tmp_path / "m.dncnn"
    save_model(small_model(), path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = (1).to_bytes(4, "little")  # depth 1 is invalid
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_model(path)


def test_trainable_arrays_order_matches_grad_arrays():
    model = small_model(depth=3, hidden=4)
    x = np.random.default_rng(16).normal(size=(2, 1, 8, 8)).astype(np.float32)
    out, tape, _ = forward(model, x, mode="train")
    grads = backward(model, tape, np.ones_like(out))
    params = list(trainable_arrays(model))
    gs = list(grad_arrays(grads))
    assert len(params) == len(gs)
    for (_, owner, name, _), g in zip(params, gs):
        assert getattr(owner, name).shape == g.shape
