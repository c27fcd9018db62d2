"""Deterministic, splittable random streams.

Streams are addressed by a path of labels under a root seed. Each path maps
to an independent Philox (counter-based) generator, so outer-sample blocks,
contrastive blocks and training steps each own their own stream and results
do not depend on scheduling or chunking order.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngStream"]


def _label_words(label) -> tuple[int, ...]:
    """Two stable uint32 words per label (ints pass through, strings hash)."""
    if isinstance(label, (bool,)):
        raise TypeError("bool rng labels are ambiguous")
    if isinstance(label, (int, np.integer)):
        v = int(label)
        if v < 0:
            raise ValueError("integer rng labels must be non-negative")
        return (v & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF)
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return tuple(int.from_bytes(digest[i:i + 4], "little") for i in (0, 4))
    raise TypeError(f"rng labels must be str or int, got {type(label).__name__}")


class RngStream:
    """A path-keyed random stream with lazy generator materialization.

    ``child(*labels)`` derives an independent stream; ``gen`` materializes
    the (stateful) generator exactly once. Identical (seed, path) pairs yield
    bitwise-identical draw sequences on the same platform.
    """

    __slots__ = ("seed", "_path", "_gen")

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        self._gen = None

    def child(self, *labels) -> "RngStream":
        path = self._path
        for lab in labels:
            path = path + _label_words(lab)
        return RngStream(self.seed, path)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self._path})"
