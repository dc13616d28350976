"""Counter-keyed substreams for reproducible parallel Monte Carlo.

Every replicate draws from its own Philox stream keyed by (base seed,
grid index, replicate index), so serial, blocked, and parallel
executions consume identical randomness regardless of layout.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_SALT_PROCESS = 0x9E3779B97F4A7C15  # golden-ratio mixing constants
_SALT_SENSING = 0xC2B2AE3D27D4EB4F


def substream(base_seed: int, grid_idx: int, replicate: int,
              sensing: bool = False) -> np.random.Generator:
    """Generator for one replicate's uniforms (or its sensing-error draws)."""
    salt = _SALT_SENSING if sensing else _SALT_PROCESS
    key = np.array([
        (int(base_seed) ^ salt) & _MASK64,
        ((int(grid_idx) << 40) ^ int(replicate)) & _MASK64,
    ], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
