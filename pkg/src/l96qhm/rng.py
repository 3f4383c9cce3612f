"""Seedable, splittable random streams.

Streams are identified by a root seed and a derivation path.  Each path maps
to an independent Philox (counter-based) generator, so work that is split by
index gives the same numbers regardless of the order in which it runs.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _key(index: int | str) -> int:
    if isinstance(index, str):
        return zlib.crc32(index.encode("utf-8"))
    index = int(index)
    if index < 0:
        raise ValueError(f"derivation index must be non-negative, got {index}")
    return index


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple[int, ...] = ()

    def derive(self, index: int | str) -> "RngStream":
        return RngStream(self.seed, self.path + (_key(index),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    # convenience draws; each call restarts the stream
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator().uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator().normal(loc, scale, size)

    def multinomial(self, n, pvals, size=None):
        return self.generator().multinomial(n, pvals, size)


def derive(stream: RngStream, index: int | str) -> RngStream:
    return stream.derive(index)


def as_stream(seed_or_stream: int | RngStream) -> RngStream:
    if isinstance(seed_or_stream, RngStream):
        return seed_or_stream
    return RngStream(int(seed_or_stream))
