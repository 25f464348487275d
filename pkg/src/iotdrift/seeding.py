"""Seed derivation.

Every random stream in the pipeline is derived from one root integer by
hashing the root together with a path of tokens::

    derive_seed(root, *tokens) = int.from_bytes(sha256(repr((root, *map(str, tokens)))), "little") >> 1

taking the first 8 bytes of the digest, which yields a 63-bit non-negative
integer. Streams derived with different token paths are independent for all
practical purposes, and the derivation is identical on every platform.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *tokens: object) -> int:
    key = repr((int(root),) + tuple(str(t) for t in tokens)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(root: int, *tokens: object) -> np.random.Generator:
    """A PCG64 generator seeded from ``derive_seed(root, *tokens)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, *tokens)))
