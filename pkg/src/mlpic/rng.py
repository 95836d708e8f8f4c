"""Keyed, counter-based random streams.

Every source of randomness is a Philox generator keyed by the global seed
plus a tuple of purpose components (strings and small ints), e.g.
``stream(7, "pimh", 6, 0)``. Distinct keys give statistically independent,
schedule-independent streams: running chains in any order, or concurrently,
cannot change what any one of them draws.

Draw-order conventions (what each consumer takes from its stream, in order)
are documented on the consuming functions; the building block here is only
the keying.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "Streams"]


def _component(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key components must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream key components must be str or int, got {type(part)!r}")


def stream(seed: int, *key) -> np.random.Generator:
    """Return a fresh Philox generator for (seed, *key)."""
    entropy = [_component(seed)] + [_component(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class Streams:
    """A stream factory bound to a seed and a key prefix.

    ``Streams(7).child("smc", 4)`` and ``stream(7, "smc", 4)`` are the same
    generator; the factory form is what composite drivers (multilevel
    estimation, experiment sweeps) pass around so each component can carve
    out its own purpose key.
    """

    def __init__(self, seed: int, *prefix):
        self.seed = int(seed)
        self.prefix = tuple(prefix)

    def child(self, *key) -> np.random.Generator:
        return stream(self.seed, *self.prefix, *key)

    def scoped(self, *key) -> "Streams":
        return Streams(self.seed, *self.prefix, *key)

    def __repr__(self):
        return f"Streams(seed={self.seed}, prefix={self.prefix!r})"
