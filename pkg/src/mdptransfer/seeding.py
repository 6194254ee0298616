"""Deterministic seed splitting: one master seed, named child streams."""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def child_seed(master: int, component: str, index: int = 0) -> int:
    """64-bit seed derived from ``sha256("<master>/<component>/<index>")``."""
    digest = hashlib.sha256(f"{int(master)}/{component}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & MASK64


def child_rng(master: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(master, component, index))
