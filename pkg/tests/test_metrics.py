"""PSNR/SSIM correctness against closed forms, plus report plumbing."""

import numpy as np
import pytest

from dncnn.degrade import Awgn
from dncnn.errors import ShapeError, SizeError
from dncnn.metrics import (
    MetricReport,
    ImageResult,
    baseline_report,
    emit_curves,
    evaluate,
    psnr,
    ssim,
)
from dncnn.model import NetworkSpec, build_network, trainable_arrays
from dncnn.rng import SeededRng
from dncnn.train import EpochStats, History


# ---------------------------------------------------------------- psnr


def test_psnr_closed_form_twenty_db():
    a = np.zeros((1, 10, 10))
    b = np.full((1, 10, 10), 0.1)
    # MSE = 0.01, so 10*log10(1/0.01) = 20
    assert abs(psnr(a, b) - 20.0) < 1e-9


def test_psnr_closed_form_one_lsb():
    a = np.zeros((1, 16, 16))
    b = np.full((1, 16, 16), 1.0 / 255.0)
    want = 10.0 * np.log10(255.0**2)
    assert abs(psnr(a, b) - want) < 1e-9


def test_psnr_identical_inputs_capped():
    x = np.random.default_rng(0).random((1, 8, 8))
    assert psnr(x, x) == 100.0


def test_psnr_respects_peak():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 25.5)
    assert abs(psnr(a, b, peak=255.0) - 20.0) < 1e-9


def test_psnr_symmetry_and_errors():
    rng = np.random.default_rng(1)
    x, y = rng.random((2, 1, 8, 8))
    assert psnr(x, y) == psnr(y, x)
    with pytest.raises(ShapeError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        psnr(x, y, peak=0.0)


# ---------------------------------------------------------------- ssim


def test_ssim_self_similarity_is_one():
    x = np.random.default_rng(2).random((1, 24, 24))
    assert abs(ssim(x, x) - 1.0) < 1e-9


def test_ssim_symmetry():
    rng = np.random.default_rng(3)
    x = rng.random((1, 20, 20))
    y = rng.random((1, 20, 20))
    assert abs(ssim(x, y) - ssim(y, x)) < 1e-12


def test_ssim_constant_offset_closed_form():
    # constant planes have zero variance, so only the luminance term acts
    m1, m2 = 0.4, 0.6
    x = np.full((16, 16), m1)
    y = np.full((16, 16), m2)
    c1 = 0.01**2
    want = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)
    assert abs(ssim(x, y) - want) < 1e-12


def test_ssim_bounded_and_penalizes_noise():
    rng = np.random.default_rng(4)
    x = rng.random((1, 32, 32))
    noisy = x + rng.normal(0, 0.2, x.shape)
    s = ssim(x, noisy)
    assert -1.0 <= s <= 1.0
    assert s < 0.95


def test_ssim_less_noise_scores_higher():
    rng = np.random.default_rng(5)
    x = rng.random((1, 32, 32))
    n = rng.normal(0, 1, x.shape)
    assert ssim(x, x + 0.05 * n) > ssim(x, x + 0.2 * n)


def test_ssim_accepts_2d_and_3d():
    x = np.random.default_rng(6).random((3, 16, 16))
    y = np.random.default_rng(7).random((3, 16, 16))
    per_channel = np.mean([ssim(x[c], y[c]) for c in range(3)])
    assert abs(ssim(x, y) - per_channel) < 1e-12


def test_ssim_rejects_small_images():
    with pytest.raises(SizeError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


# ---------------------------------------------------------------- reports


def test_report_csv_layout_and_mean_row():
    rep = MetricReport(rows=[
        ImageResult("a", "awgn:25.0", 30.0, 0.9),
        ImageResult("b", "awgn:25.0", 32.0, 0.8),
    ])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "image,degradation,psnr_db,ssim"
    assert lines[1].startswith("a,awgn:25.0,30.0")
    assert lines[-1].startswith("MEAN,,")
    assert rep.mean_psnr == pytest.approx(31.0, abs=1e-9)
    mean_cell = float(lines[-1].split(",")[2])
    assert mean_cell == pytest.approx(rep.mean_psnr, abs=1e-12)


def zero_model(depth=2, hidden=2):
    model = build_network(NetworkSpec(depth, hidden, use_bn=False), SeededRng(0))
    for _, owner, name, _ in trainable_arrays(model):
        getattr(owner, name)[...] = 0.0
    return model


def test_evaluate_zero_model_equals_noisy_baseline(natural_image):
    # an all-zero residual model returns its input, so its report must
    # match the identity-restorer baseline bit for bit
    val = [("a", natural_image), ("b", natural_image * 0.5)]
    mrep = evaluate(zero_model(), val, Awgn(25.0), seed=3)
    brep = baseline_report(val, Awgn(25.0), seed=3)
    for mr, br in zip(mrep.rows, brep.rows):
        assert mr.psnr_db == br.psnr_db
        assert mr.ssim == br.ssim


def test_evaluate_sigma_zero_scores_capped_psnr(natural_image):
    rep = evaluate(zero_model(), [("x", natural_image)], Awgn(0.0), seed=0)
    assert rep.rows[0].psnr_db == 100.0
    assert rep.rows[0].ssim == pytest.approx(1.0, abs=1e-9)


def test_evaluate_is_reproducible(natural_image):
    val = [("p", natural_image)]
    r1 = evaluate(zero_model(), val, Awgn(25.0), seed=9)
    r2 = evaluate(zero_model(), val, Awgn(25.0), seed=9)
    assert r1.rows[0].psnr_db == r2.rows[0].psnr_db
    r3 = evaluate(zero_model(), val, Awgn(25.0), seed=10)
    assert r1.rows[0].psnr_db != r3.rows[0].psnr_db


def test_evaluate_noise_stream_is_keyed_by_name(natural_image):
    solo = evaluate(zero_model(), [("b", natural_image)], Awgn(25.0), seed=3)
    pair = evaluate(zero_model(), [("a", natural_image), ("b", natural_image)],
                    Awgn(25.0), seed=3)
    assert solo.rows[0].psnr_db == pair.rows[1].psnr_db


def test_evaluate_rejects_empty_and_names_bad_image(natural_image):
    with pytest.raises(ValueError):
        evaluate(zero_model(), [], Awgn(25.0))
    tiny = natural_image[:, :8, :8]
    with pytest.raises(SizeError) as err:
        evaluate(zero_model(), [("small", tiny)], Awgn(25.0))
    assert "small" in str(err.value)


def test_psnr_monotone_decreasing_in_sigma(natural_image):
    val = [("m", natural_image)]
    scores = [baseline_report(val, Awgn(s), seed=4).mean_psnr
              for s in (5.0, 15.0, 25.0, 50.0)]
    for hi, lo in zip(scores, scores[1:]):
        assert hi > lo + 1.0


# ---------------------------------------------------------------- curves


def make_history(vals):
    return History(rows=[
        EpochStats(epoch=e, lr=0.1, train_loss=1.0, val_psnr=v)
        for e, v in enumerate(vals)
    ])


def test_emit_curves_layout():
    out = emit_curves([
        ("rl+bn", make_history([20.0, 21.5])),
        ("plain", make_history([19.0, None])),
    ])
    lines = out.splitlines()
    assert lines[0] == "epoch,rl+bn,plain"
    assert lines[1] == "0,20.0,19.0"
    assert lines[2] == "1,21.5,"


def test_emit_curves_four_runs():
    hs = [(f"v{i}", make_history([20.0 + i, 21.0 + i])) for i in range(4)]
    lines = emit_curves(hs).splitlines()
    assert lines[0] == "epoch,v0,v1,v2,v3"
    assert len(lines) == 3


def test_emit_curves_rejects_ragged_histories():
    with pytest.raises(ShapeError):
        emit_curves([
            ("a", make_history([20.0])),
            ("b", make_history([20.0, 21.0])),
        ])


def test_emit_curves_rejects_empty_input():
    with pytest.raises(ValueError):
        emit_curves([])
