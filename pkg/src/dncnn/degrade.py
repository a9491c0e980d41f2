"""Image degradation models: Gaussian noise, bicubic rescaling, JPEG-style
block compression, and a mixture that draws one of the three per call.

All functions take channel-first float images in [0, 1]. Noise levels are
quoted on the conventional 0..255 intensity scale, so sigma=25 adds noise
with standard deviation 25/255 to a unit-range image. Degraded outputs
are not clamped back into [0, 1]; clamping is an export decision left to
callers.

Each degradation has a compact text descriptor used in manifests and
evaluation reports, e.g. "awgn:25.0", "bicubic:3", "jpeg:10". Range and
choice forms describe a sampling spec rather than a single draw:
"awgn:0.0..55.0", "bicubic:2,3,4", "jpeg:5..99", and a mixture joins
three of those with "|" after a "multi:" prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, SizeError
from .tensor import Tensor

CUBIC_A = -0.5
BLIND_SIGMA_MAX = 55.0
JPEG_QUALITY_LO = 5
JPEG_QUALITY_HI = 99
SISR_FACTORS = (2, 3, 4)

# Quantization base table for 8x8 luminance blocks (quality 50).
JPEG_BASE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class Awgn:
    """Additive white Gaussian noise at one fixed level."""

    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class AwgnRange:
    """Blind noise: sigma drawn uniformly from [lo, hi] per call."""

    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= BLIND_SIGMA_MAX:
            raise ValueError(
                f"need 0 <= lo <= hi <= {BLIND_SIGMA_MAX}, got [{self.lo}, {self.hi}]"
            )


@dataclass(frozen=True)
class Bicubic:
    """Downscale-then-upscale blur at one fixed factor."""

    factor: int

    def __post_init__(self):
        if self.factor not in SISR_FACTORS:
            raise ValueError(f"factor must be one of {SISR_FACTORS}, got {self.factor}")


@dataclass(frozen=True)
class BicubicChoice:
    """Blur factor drawn uniformly from a set of factors per call."""

    factors: tuple = SISR_FACTORS

    def __post_init__(self):
        if len(self.factors) == 0:
            raise ValueError("factors must be non-empty")
        for f in self.factors:
            if f not in SISR_FACTORS:
                raise ValueError(f"factors must come from {SISR_FACTORS}, got {self.factors}")


@dataclass(frozen=True)
class Jpeg:
    """Block-compression artifacts at one fixed quality."""

    quality: int

    def __post_init__(self):
        if not JPEG_QUALITY_LO <= self.quality <= JPEG_QUALITY_HI:
            raise ValueError(
                f"quality must be in [{JPEG_QUALITY_LO}, {JPEG_QUALITY_HI}], got {self.quality}"
            )


@dataclass(frozen=True)
class JpegRange:
    """Quality drawn as a uniform integer from [lo, hi] per call."""

    lo: int = JPEG_QUALITY_LO
    hi: int = JPEG_QUALITY_HI

    def __post_init__(self):
        if not JPEG_QUALITY_LO <= self.lo <= self.hi <= JPEG_QUALITY_HI:
            raise ValueError(
                f"need {JPEG_QUALITY_LO} <= lo <= hi <= {JPEG_QUALITY_HI}, "
                f"got [{self.lo}, {self.hi}]"
            )


@dataclass(frozen=True)
class MultiTask:
    """Weighted mixture over blind noise, bicubic blur, and compression."""

    noise: AwgnRange = AwgnRange(0.0, BLIND_SIGMA_MAX)
    sisr: BicubicChoice = BicubicChoice()
    jpeg: JpegRange = JpegRange()
    weights: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.weights) != 3:
            raise ValueError("weights must have three entries")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError(
                f"weights must be non-negative with positive sum, got {self.weights}"
            )


def gaussian_noise(x: Tensor, sigma_255: float, rng: np.random.Generator) -> Tensor:
    """Add white Gaussian noise with standard deviation sigma_255/255.

    The result is not clamped. sigma_255=0 returns an identical copy
    without consuming any draws.
    """
    if sigma_255 < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma_255}")
    if sigma_255 == 0:
        return x.copy()
    noise = rng.normal(0.0, sigma_255 / 255.0, size=x.shape)
    return (x + noise).astype(x.dtype)


def sample_sigma(sigma_range, rng: np.random.Generator) -> float:
    """Uniform continuous noise level from (lo, hi)."""
    lo, hi = sigma_range
    if lo > hi:
        raise ValueError(f"need lo <= hi, got [{lo}, {hi}]")
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


def _cubic_kernel(t):
    at = np.abs(t)
    a = CUBIC_A
    near = (a + 2) * at**3 - (a + 3) * at**2 + 1
    far = a * at**3 - 5 * a * at**2 + 8 * a * at - 4 * a
    return np.where(at <= 1, near, np.where(at < 2, far, 0.0))


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation matrix for one axis.

    Uses half-pixel centers, widens the kernel when shrinking so it acts
    as an antialias filter, replicates edge samples, and renormalizes each
    row to sum to one.
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    radius = 2 * support
    left = np.floor(src - radius).astype(int) + 1
    width = int(np.ceil(2 * radius)) + 2
    taps = left[:, None] + np.arange(width)[None, :]
    weights = _cubic_kernel((taps - src[:, None]) / support)
    weights /= weights.sum(axis=1, keepdims=True)
    taps = np.clip(taps, 0, n_in - 1)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        np.add.at(mat[j], taps[j], weights[j])
    return mat


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable Catmull-Rom resize of a (c, h, w) image to (c, out_h, out_w)."""
    if x.ndim != 3:
        raise ShapeError(f"expected a (c, h, w) image, got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    c, h, w = x.shape
    mh = _resize_matrix(h, out_h)
    mw = _resize_matrix(w, out_w)
    y = np.einsum("ij,cjk,lk->cil", mh, x.astype(np.float64), mw)
    return y.astype(x.dtype)


def sisr_degrade(x: Tensor, factor: int) -> Tensor:
    """Bicubic shrink by `factor` then bicubic enlarge back to the input size.

    The result is the blurry interpolated image a super-resolver would
    start from, at the same resolution as the ground truth. The shrunken
    intermediate is floor(h/factor) x floor(w/factor).
    """
    if x.ndim != 3:
        raise ShapeError(f"expected a (c, h, w) image, got shape {x.shape}")
    if factor not in SISR_FACTORS:
        raise ValueError(f"factor must be one of {SISR_FACTORS}, got {factor}")
    c, h, w = x.shape
    if h < factor or w < factor:
        raise SizeError(f"image {h}x{w} is smaller than factor {factor}")
    low = bicubic_resize(x, h // factor, w // factor)
    return bicubic_resize(low, h, w)


def _dct_matrix() -> np.ndarray:
    k = np.arange(8)[:, None]
    n = np.arange(8)[None, :]
    d = np.cos(np.pi * (2 * n + 1) * k / 16.0) * np.sqrt(2.0 / 8.0)
    d[0, :] = np.sqrt(1.0 / 8.0)
    return d


_DCT = _dct_matrix()


def jpeg_table(quality: int) -> np.ndarray:
    """Luminance quantization table at the given quality in [1, 100]."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    if quality < 50:
        scale = 5000.0 / quality
    else:
        scale = 200.0 - 2.0 * quality
    table = np.floor((JPEG_BASE_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def jpeg_degrade(x: Tensor, quality: int) -> Tensor:
    """Block-DCT quantization round trip approximating JPEG compression.

    Each channel runs the baseline luma path: scale to [0, 255], shift by
    -128, 8x8 blocking with replicate padding, 2-D DCT, quantize with the
    quality-scaled luminance table, dequantize, inverse DCT, unshift,
    clamp, rescale. Entropy coding is lossless and therefore omitted.
    """
    if x.ndim != 3:
        raise ShapeError(f"expected a (c, h, w) image, got shape {x.shape}")
    table = jpeg_table(quality)
    c, h, w = x.shape
    ph = (-h) % 8
    pw = (-w) % 8
    img = x.astype(np.float64) * 255.0 - 128.0
    img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
    hb = (h + ph) // 8
    wb = (w + pw) // 8
    blocks = img.reshape(c, hb, 8, wb, 8).transpose(0, 1, 3, 2, 4)
    coeff = np.einsum("ij,cbqjk,lk->cbqil", _DCT, blocks, _DCT)
    coeff = np.round(coeff / table) * table
    pixels = np.einsum("ji,cbqjk,kl->cbqil", _DCT, coeff, _DCT)
    img = pixels.transpose(0, 1, 3, 2, 4).reshape(c, h + ph, w + pw)
    img = np.clip(img[:, :h, :w] + 128.0, 0.0, 255.0) / 255.0
    return img.astype(x.dtype)


def spec_token(spec) -> str:
    """Canonical descriptor string for a degradation spec."""
    if isinstance(spec, Awgn):
        return f"awgn:{spec.sigma!r}"
    if isinstance(spec, AwgnRange):
        return f"awgn:{spec.lo!r}..{spec.hi!r}"
    if isinstance(spec, Bicubic):
        return f"bicubic:{spec.factor}"
    if isinstance(spec, BicubicChoice):
        return "bicubic:" + ",".join(str(f) for f in spec.factors)
    if isinstance(spec, Jpeg):
        return f"jpeg:{spec.quality}"
    if isinstance(spec, JpegRange):
        return f"jpeg:{spec.lo}..{spec.hi}"
    if isinstance(spec, MultiTask):
        parts = [spec_token(spec.noise), spec_token(spec.sisr), spec_token(spec.jpeg)]
        return "multi:" + "|".join(parts)
    raise TypeError(f"not a degradation spec: {spec!r}")


def _parse_float(text: str, token: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"bad degradation descriptor {token!r}") from None


def _parse_int(text: str, token: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"bad degradation descriptor {token!r}") from None


def parse_token(token: str):
    """Inverse of spec_token; raises ConfigError on malformed input."""
    try:
        if token.startswith("multi:"):
            parts = token[len("multi:") :].split("|")
            if len(parts) != 3:
                raise ConfigError(f"mixture descriptor needs three parts: {token!r}")
            noise, sisr, jpeg = (parse_token(p) for p in parts)
            if isinstance(noise, Awgn):
                noise = AwgnRange(noise.sigma, noise.sigma)
            if isinstance(sisr, Bicubic):
                sisr = BicubicChoice((sisr.factor,))
            if isinstance(jpeg, Jpeg):
                jpeg = JpegRange(jpeg.quality, jpeg.quality)
            if not (
                isinstance(noise, AwgnRange)
                and isinstance(sisr, BicubicChoice)
                and isinstance(jpeg, JpegRange)
            ):
                raise ConfigError(f"mixture parts must be awgn, bicubic, jpeg: {token!r}")
            return MultiTask(noise, sisr, jpeg)
        kind, _, rest = token.partition(":")
        if not rest:
            raise ConfigError(f"bad degradation descriptor {token!r}")
        if kind == "awgn":
            if ".." in rest:
                lo, hi = rest.split("..", 1)
                return AwgnRange(_parse_float(lo, token), _parse_float(hi, token))
            return Awgn(_parse_float(rest, token))
        if kind == "bicubic":
            if "," in rest:
                return BicubicChoice(tuple(_parse_int(f, token) for f in rest.split(",")))
            return Bicubic(_parse_int(rest, token))
        if kind == "jpeg":
            if ".." in rest:
                lo, hi = rest.split("..", 1)
                return JpegRange(_parse_int(lo, token), _parse_int(hi, token))
            return Jpeg(_parse_int(rest, token))
        raise ConfigError(f"unknown degradation kind {kind!r} in {token!r}")
    except ValueError as exc:
        raise ConfigError(f"bad degradation descriptor {token!r}: {exc}") from None


def degrade(clean: Tensor, spec, rng: np.random.Generator):
    """Apply one draw of the degradation to a clean image.

    Returns (input, residual_target, label): the degraded input, the
    corruption the network should predict (input minus clean, exactly),
    and a descriptor recording the concrete parameters of this draw.
    Range and choice specs consume draws from `rng` in a fixed order
    (parameter first, then any noise), so the same generator state
    reproduces the same output.
    """
    if isinstance(spec, Awgn):
        noisy = gaussian_noise(clean, spec.sigma, rng)
        return noisy, noisy - clean, f"awgn:{spec.sigma!r}"
    if isinstance(spec, AwgnRange):
        sigma = sample_sigma((spec.lo, spec.hi), rng)
        noisy = gaussian_noise(clean, sigma, rng)
        return noisy, noisy - clean, f"awgn:{sigma!r}"
    if isinstance(spec, Bicubic):
        blurred = sisr_degrade(clean, spec.factor)
        return blurred, blurred - clean, f"bicubic:{spec.factor}"
    if isinstance(spec, BicubicChoice):
        factor = int(spec.factors[int(rng.integers(len(spec.factors)))])
        blurred = sisr_degrade(clean, factor)
        return blurred, blurred - clean, f"bicubic:{factor}"
    if isinstance(spec, Jpeg):
        packed = jpeg_degrade(clean, spec.quality)
        return packed, packed - clean, f"jpeg:{spec.quality}"
    if isinstance(spec, JpegRange):
        quality = int(rng.integers(spec.lo, spec.hi + 1))
        packed = jpeg_degrade(clean, quality)
        return packed, packed - clean, f"jpeg:{quality}"
    if isinstance(spec, MultiTask):
        subs = (spec.noise, spec.sisr, spec.jpeg)
        active = [i for i, w in enumerate(spec.weights) if w > 0]
        if len(active) == 1:
            return degrade(clean, subs[active[0]], rng)
        total = sum(spec.weights)
        u = float(rng.random()) * total
        acc = 0.0
        pick = active[-1]
        for i in range(3):
            acc += spec.weights[i]
            if u < acc:
                pick = i
                break
        return degrade(clean, subs[pick], rng)
    raise TypeError(f"not a degradation spec: {spec!r}")
