"""Image I/O, patch sampling, and dataset manifests.

Images are binary PGM (P5) or PPM (P6) files with 8-bit samples and
maxval 255, loaded as channel-first float32 arrays in [0, 1]. Training
sets are built by sampling fixed-size patches at random offsets from a
list of source images; every draw is recorded in a plain-text manifest so
the exact same dataset can be rebuilt from the manifest and the original
files.

Three dataset modes cover the models in this package:

  S      fixed-sigma noise, 40x40 patches, 204800 at paper scale
  B      blind noise in [0, 55], 50x50 patches, 384000 at paper scale
  3      noise/rescale/compression mixture, 50x50 patches, 1024000

Desk scale divides the paper counts by a factor (default 100) so the same
presets run on one workstation; the factor is recorded in the manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .degrade import (
    Awgn,
    AwgnRange,
    BicubicChoice,
    JpegRange,
    MultiTask,
    parse_token,
    spec_token,
)
from .errors import FormatError, ShapeError, SizeError
from .rng import SeededRng
from .tensor import Tensor

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DESK_FACTOR_DEFAULT = 100

# mode -> (patch size, paper-scale patch count)
MODE_SHAPES = {
    "S": (40, 128 * 1600),
    "B": (50, 128 * 3000),
    "3": (50, 128 * 8000),
}


class _HeaderScanner:
    """Whitespace/comment-aware tokenizer for PNM headers that tracks the
    byte offset, so errors can point at the exact spot in the file."""

    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def fail(self, message: str):
        raise FormatError(f"{self.path}: {message}", offset=self.pos)

    def skip_space(self):
        while self.pos < len(self.blob):
            b = self.blob[self.pos]
            if b in b" \t\r\n":
                self.pos += 1
            elif b == ord("#"):
                while self.pos < len(self.blob) and self.blob[self.pos] != ord("\n"):
                    self.pos += 1
            else:
                return

    def token(self) -> bytes:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.blob) and self.blob[self.pos] not in b" \t\r\n#":
            self.pos += 1
        if self.pos == start:
            self.fail("unexpected end of header")
        return self.blob[start : self.pos]

    def int_token(self, what: str) -> int:
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            self.pos -= len(tok)
            self.fail(f"bad {what}: {tok!r}")


def load_image(path: str) -> Tensor:
    """Load a P5 or P6 file as a (c, h, w) float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    scan = _HeaderScanner(blob, path)
    magic = blob[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"{path}: not a P5/P6 file (magic {magic!r})", offset=0)
    scan.pos = 2
    width = scan.int_token("width")
    height = scan.int_token("height")
    maxval = scan.int_token("maxval")
    if width < 1 or height < 1:
        scan.fail(f"bad dimensions {width}x{height}")
    if maxval != 255:
        scan.fail(f"unsupported maxval {maxval} (only 255)")
    if scan.pos >= len(blob) or blob[scan.pos] not in b" \t\r\n":
        scan.fail("missing whitespace after maxval")
    scan.pos += 1
    need = width * height * channels
    raster = blob[scan.pos : scan.pos + need]
    if len(raster) < need:
        raise FormatError(
            f"{path}: raster truncated, need {need} bytes, have {len(raster)}",
            offset=scan.pos + len(raster),
        )
    flat = np.frombuffer(raster, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return flat.reshape(1, height, width)
    return flat.reshape(height, width, 3).transpose(2, 0, 1).copy()


def save_image(img: Tensor, path: str):
    """Save a (1, h, w) array as P5 or a (3, h, w) array as P6, 8-bit.

    Values are clamped to [0, 1] and rounded half-up, so loading a saved
    byte-valued image reproduces it exactly.
    """
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise FormatError(f"cannot write image of shape {img.shape}")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    data = np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5)
    data = np.clip(data, 0, 255).astype(np.uint8)
    if c == 3:
        data = data.transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def to_gray(img: Tensor) -> Tensor:
    """BT.601 luma; grayscale input passes through as a copy."""
    if img.ndim != 3:
        raise FormatError(f"expected (c, h, w), got shape {img.shape}")
    if img.shape[0] == 1:
        return img.copy()
    if img.shape[0] != 3:
        raise FormatError(f"expected 1 or 3 channels, got {img.shape[0]}")
    r, g, b = LUMA_WEIGHTS
    gray = r * img[0] + g * img[1] + b * img[2]
    return gray[None].astype(img.dtype)


def augment(patch: Tensor, k: int) -> Tensor:
    """One of the eight axis-aligned symmetries of a square patch.

    k in [0, 8): k % 4 counterclockwise quarter turns, preceded by a
    horizontal flip when k >= 4. k=0 is a plain copy.
    """
    if not 0 <= k < 8:
        raise ValueError(f"k must be in [0, 8), got {k}")
    if patch.ndim != 3 or patch.shape[1] != patch.shape[2]:
        raise ShapeError(f"expected a square (c, s, s) patch, got shape {patch.shape}")
    x = patch[:, :, ::-1] if k >= 4 else patch
    return np.ascontiguousarray(np.rot90(x, k % 4, axes=(1, 2)))


@dataclass
class Manifest:
    """Everything needed to regenerate a patch dataset bit-exactly."""

    sources: list
    patch: int
    count: int
    seed: int
    mode: str
    degrade_token: str
    scale: str = "paper"
    entries: list = field(default_factory=list)


@dataclass
class PatchDataset:
    """Clean patches as one (count, c, size, size) float32 array plus the
    degradation spec that training applies to them lazily."""

    patches: Tensor
    spec: object
    manifest: Manifest | None = None


def extract_patches(images, patch: int, count: int, rng):
    """Draw `count` clean patches at uniform random positions.

    Source images are chosen uniformly, then a top-left corner is chosen
    uniformly within each. Returns (patches, entries) where entries are
    (idx, src_index, top, left) rows for the manifest.
    """
    if patch < 1:
        raise ValueError(f"patch size must be >= 1, got {patch}")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    for i, img in enumerate(images):
        if img.shape[1] < patch or img.shape[2] < patch:
            raise SizeError(
                f"source image {i} is {img.shape[1]}x{img.shape[2]}, "
                f"smaller than patch size {patch}"
            )
    entries = []
    for idx in range(count):
        src = int(rng.integers(len(images)))
        h, w = images[src].shape[1:]
        top = int(rng.integers(h - patch + 1))
        left = int(rng.integers(w - patch + 1))
        entries.append((idx, src, top, left))
    return _cut_patches(images, entries, patch), entries


def _cut_patches(images, entries, patch: int) -> Tensor:
    c = images[0].shape[0] if images else 1
    out = np.empty((len(entries), c, patch, patch), dtype=np.float32)
    for idx, src, top, left in entries:
        img = images[src]
        if img.shape[1] < top + patch or img.shape[2] < left + patch:
            raise SizeError(
                f"patch {idx} at ({top}, {left}) exceeds source {src} shape {img.shape}"
            )
        out[idx] = img[:, top : top + patch, left : left + patch]
    return out


def _mode_spec(mode: str, sigma: float):
    if mode == "S":
        return Awgn(sigma)
    if mode == "B":
        return AwgnRange(0.0, 55.0)
    if mode == "3":
        return MultiTask(AwgnRange(0.0, 55.0), BicubicChoice((2, 3, 4)), JpegRange(5, 99))
    raise ValueError(f"mode must be 'S', 'B', or '3', got {mode!r}")


def build_dataset(mode: str, sources, scale: str = "desk", seed: int = 0,
                  sigma: float = 25.0, desk_factor: int = DESK_FACTOR_DEFAULT) -> PatchDataset:
    """Assemble one of the standard training sets from source image paths.

    mode "S" takes the fixed noise level from `sigma`; "B" and "3" ignore
    it. Color sources are converted to luma. scale "paper" uses the full
    published patch counts; "desk" divides them by `desk_factor`.
    """
    if mode == "Three":
        mode = "3"
    if mode not in MODE_SHAPES:
        raise ValueError(f"mode must be 'S', 'B', or '3', got {mode!r}")
    if scale not in ("paper", "desk"):
        raise ValueError(f"scale must be 'paper' or 'desk', got {scale!r}")
    if not sources:
        raise ValueError("sources must be non-empty")
    if desk_factor < 1:
        raise ValueError(f"desk_factor must be >= 1, got {desk_factor}")
    patch, count = MODE_SHAPES[mode]
    if scale == "desk":
        count = max(1, count // desk_factor)
    spec = _mode_spec(mode, sigma)
    images = [to_gray(load_image(p)) for p in sources]
    rng = SeededRng(seed).stream("patches")
    patches, entries = extract_patches(images, patch, count, rng)
    manifest = Manifest(
        sources=list(sources),
        patch=patch,
        count=count,
        seed=seed,
        mode=mode,
        degrade_token=spec_token(spec),
        scale="paper" if scale == "paper" else f"desk:{desk_factor}",
        entries=entries,
    )
    return PatchDataset(patches, spec, manifest)


def write_manifest(path: str, manifest: Manifest):
    lines = []
    for name in manifest.sources:
        lines.append(f"source={name}")
    lines.append(f"patch={manifest.patch}")
    lines.append(f"count={manifest.count}")
    lines.append(f"seed={manifest.seed}")
    lines.append(f"mode={manifest.mode}")
    lines.append(f"degrade={manifest.degrade_token}")
    lines.append(f"scale={manifest.scale}")
    lines.append("idx,src_index,top,left")
    for idx, src, top, left in manifest.entries:
        lines.append(f"{idx},{src},{top},{left}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> Manifest:
    sources = []
    fields = {"scale": "paper"}
    entries = []
    in_rows = False
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line == "idx,src_index,top,left":
                in_rows = True
                continue
            if in_rows:
                parts = line.split(",")
                if len(parts) != 4:
                    raise FormatError(f"{path}:{lineno}: bad patch row {line!r}")
                try:
                    entries.append(tuple(int(p) for p in parts))
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad patch row {line!r}") from None
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            if key == "source":
                sources.append(value)
            elif key in ("patch", "count", "seed"):
                try:
                    fields[key] = int(value)
                except ValueError:
                    raise FormatError(
                        f"{path}:{lineno}: bad integer for {key}: {value!r}"
                    ) from None
            elif key in ("mode", "degrade", "scale"):
                fields[key] = value
            else:
                raise FormatError(f"{path}:{lineno}: unknown manifest key {key!r}")
    for key in ("patch", "count", "seed", "mode", "degrade"):
        if key not in fields:
            raise FormatError(f"{path}: missing manifest key {key!r}")
    if not sources:
        raise FormatError(f"{path}: no source lines")
    if len(entries) != fields["count"]:
        raise FormatError(f"{path}: count={fields['count']} but {len(entries)} patch rows")
    return Manifest(
        sources=sources,
        patch=fields["patch"],
        count=fields["count"],
        seed=fields["seed"],
        mode=fields["mode"],
        degrade_token=fields["degrade"],
        scale=fields["scale"],
        entries=entries,
    )


def dataset_from_manifest(manifest: Manifest, image_dir: str | None = None) -> PatchDataset:
    """Rebuild the exact dataset a manifest describes from its source files.

    Relative source paths are resolved against `image_dir` when given.
    """
    paths = [
        os.path.join(image_dir, p) if image_dir and not os.path.isabs(p) else p
        for p in manifest.sources
    ]
    images = [to_gray(load_image(p)) for p in paths]
    spec = parse_token(manifest.degrade_token)
    return PatchDataset(_cut_patches(images, manifest.entries, manifest.patch),
                        spec, manifest)
