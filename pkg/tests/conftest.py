"""Shared fixtures: synthetic test images and small helpers.

The synthetic images mix low-frequency sinusoids, a global gradient, and
overlapping rectangles, so they have both smooth regions and hard edges
like photographic content. Values are quantized to the 8-bit grid so PGM
round trips are exact.
"""

import numpy as np
import pytest


def synth_image(rng, h=96, w=96):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) / max(h, w)
    img = np.zeros((h, w))
    for _ in range(3):
        fx, fy = rng.uniform(1.0, 6.0, 2)
        p1, p2 = rng.uniform(0, 2 * np.pi, 2)
        img += rng.uniform(0.08, 0.3) * np.sin(2 * np.pi * fx * xx + p1) * np.cos(
            2 * np.pi * fy * yy + p2
        )
    img += rng.uniform(-0.5, 0.5) * xx + rng.uniform(-0.5, 0.5) * yy
    for _ in range(5):
        bh = int(rng.integers(max(2, h // 8), max(3, h // 3)))
        bw = int(rng.integers(max(2, w // 8), max(3, w // 3)))
        t = int(rng.integers(0, max(1, h - bh)))
        l = int(rng.integers(0, max(1, w - bw)))
        img[t : t + bh, l : l + bw] += rng.uniform(-0.45, 0.45)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) * 0.9 + 0.05
    img = np.round(img * 255) / 255
    return img[None].astype(np.float32)


def textured_image(rng, h=96, w=96):
    """synth_image plus high-frequency texture.

    The extra detail is what separates a learned denoiser from a box
    filter: the filter averages it away, the network can keep it.
    """
    img = synth_image(rng, h, w)[0].astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) / max(h, w)
    for _ in range(2):
        fx, fy = rng.uniform(16.0, 28.0, 2)
        p1, p2 = rng.uniform(0, 2 * np.pi, 2)
        img += rng.uniform(0.07, 0.12) * np.sin(2 * np.pi * fx * xx + p1) * np.sin(
            2 * np.pi * fy * yy + p2
        )
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) * 0.9 + 0.05
    img = np.round(img * 255) / 255
    return img[None].astype(np.float32)


def diverse_image(rng, h=96, w=96):
    """Dense oriented texture with no small repeating family.

    Each image mixes many gratings at random orientations, frequencies,
    and phases, so a small corpus never pins down the content
    distribution. A denoiser trained on these cannot shortcut by
    memorizing the clean signal family; it has to preserve whatever
    structure the input carries, which is the regime where predicting
    the residual instead of the image pays off.
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) / max(h, w)
    img = np.zeros((h, w))
    for _ in range(8):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4.0, 36.0)
        phase = rng.uniform(0, 2 * np.pi)
        u = xx * np.cos(theta) + yy * np.sin(theta)
        img += rng.uniform(0.05, 0.22) * np.sin(2 * np.pi * freq * u + phase)
    for _ in range(4):
        bh = int(rng.integers(max(2, h // 10), max(3, h // 3)))
        bw = int(rng.integers(max(2, w // 10), max(3, w // 3)))
        t = int(rng.integers(0, max(1, h - bh)))
        l = int(rng.integers(0, max(1, w - bw)))
        img[t : t + bh, l : l + bw] += rng.uniform(-0.4, 0.4)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) * 0.9 + 0.05
    img = np.round(img * 255) / 255
    return img[None].astype(np.float32)


@pytest.fixture
def natural_image():
    return synth_image(np.random.default_rng(314), 64, 64)


@pytest.fixture
def image_corpus():
    rng = np.random.default_rng(2718)
    return [synth_image(rng, 80, 80) for _ in range(8)]


def finite_difference(f, x, h=1e-4):
    """Central-difference gradient of scalar f() w.r.t. array x, in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def max_rel_err(analytic, numeric):
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale
