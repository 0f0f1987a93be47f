"""Labelled sub-seed derivation from one master seed.

``derive_seed(master, label)`` is the first 8 bytes (little-endian) of
``sha256(f"{master}:{label}")``, so any component can be re-run in isolation
from the master seed and its label alone.
"""
import hashlib

import numpy as np


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, label))
