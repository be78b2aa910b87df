"""Seed splitting.

Every stage derives its own generator from the single global seed with
``child_seed(parent, *labels)``: the first 8 bytes (little-endian) of
BLAKE2b over ``"{parent}/{label1}/{label2}..."``. Stages are therefore
reproducible in isolation and independent of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def child_seed(parent: int, *labels) -> int:
    text = "/".join([str(int(parent))] + [str(label) for label in labels])
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def rng_for(parent: int, *labels) -> np.random.Generator:
    return np.random.default_rng(child_seed(parent, *labels))
