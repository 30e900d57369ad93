"""Named, order-independent random streams derived from one root seed."""
from __future__ import annotations

import hashlib

import numpy as np


def _encode(part) -> int:
    # Type-tagged so that an int and a string never map to the same word.
    if isinstance(part, (bool, np.bool_)):
        raise TypeError("stream path parts must be int or str")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path ints must be non-negative, got {part}")
        return 2 * int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return 2 * int.from_bytes(digest[:8], "little") + 1
    raise TypeError(f"unsupported stream path part {part!r}")


class SeedTree:
    """Derives independent generators from ``(root, purpose, round, user)`` names.

    Each call builds a fresh generator, so the draws for a given name never
    depend on which other streams were consumed first.
    """

    def __init__(self, root: int):
        self.root = int(root)

    def seed_sequence(self, purpose: str, round: int | None = None, user: int | None = None):
        path = [purpose]
        if round is not None:
            path += ["round", round]
        if user is not None:
            path += ["user", user]
        return np.random.SeedSequence(self.root, spawn_key=tuple(_encode(p) for p in path))

    def rng(self, purpose: str, round: int | None = None, user: int | None = None) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence(purpose, round, user))

    def __repr__(self):
        return f"SeedTree({self.root})"
