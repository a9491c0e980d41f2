"""Reproducible random streams.

Every random choice in the package flows from a single 64-bit run seed
through `SeededRng`. Streams are derived with numpy's `SeedSequence`
spawn-key mechanism on top of the counter-based Philox generator, so the
same (seed, stream ids) always yields the same sample sequence, on any
platform, and sibling streams are statistically independent. String ids
are hashed to stable integers so call sites can use readable labels like
``rng.stream("shuffle", epoch)``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _id_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream ids must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "little")
    raise TypeError(f"stream id must be int or str, got {type(part).__name__}")


class SeededRng:
    """A root seed from which independent, reproducible streams derive."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, *ids) -> np.random.Generator:
        """Return a fresh generator for the sub-stream named by `ids`."""
        key = tuple(_id_to_int(p) for p in ids)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(seq))

    def root(self) -> np.random.Generator:
        return self.stream()

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"
