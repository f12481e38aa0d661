"""SplitMix64 streams for compiled simulation kernels.

Every replicate owns a SplitMix64 stream (Steele, Lea & Flood, 2014).
Replicate ``r`` of a run with base seed ``b`` starts from state
``stream_seed(b, r) = mix64(b + (r + 1) * GOLDEN_GAMMA)``, i.e. the r-th
output of a SplitMix64 generator seeded with ``b``.  The derivation only
depends on ``(b, r)``, so results do not depend on how replicates are
scheduled across threads.

Uniform doubles use the top 53 bits of each output.
"""

import numpy as np
from numba import njit

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53_INV = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def stream_seed(base, r):
    return mix64(base + (np.uint64(r) + np.uint64(1)) * GOLDEN_GAMMA)


@njit(cache=True, nogil=True)
def next_uniform(state):
    """Advance ``state`` (a 1-element uint64 array) and return a double in [0, 1)."""
    state[0] += GOLDEN_GAMMA
    return np.float64(mix64(state[0]) >> _S11) * _TWO53_INV


def as_seed(seed: int) -> np.uint64:
    """Reduce any Python int to a 64-bit seed word."""
    return np.uint64(int(seed) & MASK64)
