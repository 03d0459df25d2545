"""Order-independent seed derivation."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash arbitrary (str/int/float) parts into a 64-bit seed."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.generic):
            p = p.item()
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
