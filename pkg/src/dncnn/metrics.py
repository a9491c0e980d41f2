"""PSNR and SSIM, plus whole-image evaluation of a trained model.

Both metrics accumulate in float64 regardless of input precision. PSNR of
an exact match is reported as 100 dB instead of infinity so reports stay
finite. SSIM uses the standard 11x11 Gaussian window with sigma 1.5 and
stability constants (0.01 L)^2 and (0.03 L)^2, evaluated only where the
window fits entirely inside the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .degrade import degrade
from .errors import ShapeError, SizeError
from .model import Model, denoise
from .rng import SeededRng
from .tensor import Tensor

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; 100 dB when the inputs match."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(np.square(diff)))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


_SSIM_KERNEL = _gaussian_window()


def _windowed_mean(x: np.ndarray) -> np.ndarray:
    win = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(win, _SSIM_KERNEL, axes=([2, 3], [0, 1]))


def _ssim_plane(x: np.ndarray, y: np.ndarray, peak: float) -> float:
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_x = _windowed_mean(x)
    mu_y = _windowed_mean(y)
    var_x = _windowed_mean(x * x) - mu_x * mu_x
    var_y = _windowed_mean(y * y) - mu_y * mu_y
    cov = _windowed_mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Mean structural similarity over valid window positions.

    Accepts (h, w) planes or (c, h, w) images; channels are averaged.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ShapeError(f"expected (h, w) or (c, h, w), got shape {a.shape}")
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise SizeError(
            f"image {a.shape[1]}x{a.shape[2]} is smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    vals = [
        _ssim_plane(a[c].astype(np.float64), b[c].astype(np.float64), peak)
        for c in range(a.shape[0])
    ]
    return float(np.mean(vals))


@dataclass
class ImageResult:
    image: str
    degradation: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["image,degradation,psnr_db,ssim"]
        for r in self.rows:
            lines.append(f"{r.image},{r.degradation},{r.psnr_db!r},{r.ssim!r}")
        lines.append(f"MEAN,,{self.mean_psnr!r},{self.mean_ssim!r}")
        return "\n".join(lines) + "\n"


def evaluate(model: Model, named_images, spec, seed: int = 0) -> MetricReport:
    """Degrade each (name, image) pair, run the model, and score the result.

    Each image gets its own degradation stream keyed by name, so adding or
    reordering images never changes another image's corruption. Outputs
    are clamped to [0, 1] before scoring.
    """
    if not named_images:
        raise ValueError("no images to evaluate")
    seeds = SeededRng(seed)
    report = MetricReport(metadata={"seed": seed})
    for name, img in named_images:
        rng = seeds.stream("eval", name)
        try:
            degraded, _, token = degrade(img, spec, rng)
            restored = denoise(model, degraded[None].astype(np.float32))[0]
            restored = np.clip(restored, 0.0, 1.0)
            row = ImageResult(
                image=name,
                degradation=token,
                psnr_db=psnr(restored, img),
                ssim=ssim(restored, img),
            )
        except (ShapeError, SizeError, ValueError) as exc:
            raise type(exc)(f"image {name!r}: {exc}") from exc
        report.rows.append(row)
    return report


def baseline_report(named_images, spec, seed: int = 0, restore=None) -> MetricReport:
    """Score a fixed restorer (identity by default) instead of a model.

    Useful for no-op and classical-filter baselines; `restore` maps a
    degraded (c, h, w) image to its restored version.
    """
    if not named_images:
        raise ValueError("no images to evaluate")
    seeds = SeededRng(seed)
    report = MetricReport(metadata={"seed": seed})
    for name, img in named_images:
        rng = seeds.stream("eval", name)
        degraded, _, token = degrade(img, spec, rng)
        restored = degraded if restore is None else restore(degraded)
        restored = np.clip(restored, 0.0, 1.0)
        report.rows.append(
            ImageResult(
                image=name,
                degradation=token,
                psnr_db=psnr(restored, img),
                ssim=ssim(restored, img),
            )
        )
    return report


def emit_curves(labeled_histories) -> str:
    """Side-by-side validation PSNR curves as CSV.

    Takes (label, history) pairs; rows are epochs, one column per run,
    blank where a run logged no validation value that epoch.
    """
    labeled_histories = list(labeled_histories)
    if not labeled_histories:
        raise ValueError("no histories to emit")
    lengths = {len(h.rows) for _, h in labeled_histories}
    if len(lengths) != 1:
        raise ShapeError(f"histories have unequal epoch counts: {sorted(lengths)}")
    labels = [label for label, _ in labeled_histories]
    lines = ["epoch," + ",".join(labels)]
    for e in range(lengths.pop()):
        cells = [str(e)]
        for _, h in labeled_histories:
            v = h.rows[e].val_psnr
            cells.append("" if v is None else repr(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
