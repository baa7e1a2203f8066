"""Counter-based randomness with explicit stream addressing.

The block function is Threefry-2x32 with 20 rounds, from the Random123
suite (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3",
SC 2011).  A 64-bit output block is a pure function of a 64-bit key and
a 64-bit counter; no state is threaded between draws.  Any draw can be
regenerated in isolation, so simulated data are independent of batch
size, generation order, and thread count.

Addressing layout
-----------------
    key word 0     = seed         & 0xffffffff
    key word 1     = (seed >> 32) & 0xffffffff
    counter word 0 = index & 0xffffffff
    counter word 1 = ((index >> 32) << 16) | (tag << 8) | draw

A stream is named by (seed, tag); element ``index`` of a stream has up
to 256 independent draws.  Limits (checked): index < 2**48, tag < 256,
draw < 256.  One block yields one double in [0, 1) via the top 53 bits.

``derive_seed`` folds small integers into a seed through the same block
function, producing statistically independent child seeds for
subsystems (for example per-arm detector noise) with no tag bookkeeping
across module boundaries.

Stream tags used by this package are declared below; keeping them in
one table prevents silent collisions between call sites.
"""

from __future__ import annotations

import numpy as np

_ROTATIONS = (13, 15, 26, 6, 17, 29, 16, 24)
_PARITY = 0x1BD11BDA  # Threefry key-schedule constant, ks2 = c ^ k0 ^ k1

_MAX_INDEX = 1 << 48
_MAX_TAG = 1 << 8
_MAX_DRAW = 1 << 8

# trial-indexed streams (index = trial number)
TAG_SETTING_A = 1
TAG_SETTING_B = 2
TAG_OUTCOME = 3
TAG_LAMBDA = 4
# event-indexed detector streams (index = event position in the record)
TAG_KEEP = 5
TAG_JITTER = 6
# dark-noise streams (index = dark event number)
TAG_DARK_GAP = 7
TAG_DARK_MARK = 8
# seed derivation (index = folded part)
TAG_DERIVE = 250


def threefry2x32(key0: int, key1: int, x0, x1):
    """Apply the 20-round Threefry-2x32 block function elementwise.

    ``key0``/``key1`` are the 32-bit key words; ``x0``/``x1`` are
    counter words as uint32 arrays (broadcast together).  Returns the
    two output word arrays.  Matches the Random123 reference ordering:
    key = (key0, key1), counter = (x0, x1).
    """
    ks0 = np.uint32(key0)
    ks1 = np.uint32(key1)
    ks2 = np.uint32(_PARITY) ^ ks0 ^ ks1
    ks = (ks0, ks1, ks2)
    # additions wrap mod 2**32 by design
    with np.errstate(over="ignore"):
        x0 = np.asarray(x0, dtype=np.uint32) + ks0
        x1 = np.asarray(x1, dtype=np.uint32) + ks1
        for block in range(5):
            base = 4 * (block % 2)
            for rot in _ROTATIONS[base:base + 4]:
                x0 = x0 + x1
                x1 = (x1 << rot) | (x1 >> (32 - rot))
                x1 = x0 ^ x1
            x0 = x0 + ks[(block + 1) % 3]
            x1 = x1 + ks[(block + 2) % 3] + np.uint32(block + 1)
    return x0, x1


def _check_tag_draw(tag: int, draw: int) -> None:
    if not 0 <= tag < _MAX_TAG:
        raise ValueError(f"stream tag {tag} outside [0, {_MAX_TAG})")
    if not 0 <= draw < _MAX_DRAW:
        raise ValueError(f"draw number {draw} outside [0, {_MAX_DRAW})")


class CounterRng:
    """Addressable random streams under one 64-bit seed.

    Every method is vectorized over ``index`` and returns an array of
    the same shape.  Calls with equal (seed, tag, index, draw) always
    return the same value.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._k0 = self.seed & 0xFFFFFFFF
        self._k1 = self.seed >> 32

    def raw_words(self, index, tag: int, draw: int = 0):
        """Return the (word0, word1) uint32 block arrays at the given
        stream addresses."""
        _check_tag_draw(tag, draw)
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= _MAX_INDEX):
            raise ValueError(f"stream index outside [0, {_MAX_INDEX})")
        x0 = (index & 0xFFFFFFFF).astype(np.uint32)
        x1 = ((index >> 32).astype(np.uint32) << 16) | np.uint32(
            (tag << 8) | draw)
        return threefry2x32(self._k0, self._k1, x0, x1)

    def raw64(self, index, tag: int, draw: int = 0):
        """Return uint64 blocks (word0 high, word1 low)."""
        y0, y1 = self.raw_words(index, tag, draw)
        return (y0.astype(np.uint64) << np.uint64(32)) | y1.astype(np.uint64)

    def uniform(self, index, tag: int, draw: int = 0):
        """Uniform doubles in [0, 1): top 53 bits of the block."""
        return (self.raw64(index, tag, draw) >> np.uint64(11)) * 2.0 ** -53

    def normal(self, index, tag: int, draw: int = 0):
        """Standard normals via Box-Muller (cosine branch).

        Consumes draw numbers ``draw`` and ``draw + 1``.
        """
        u1 = self.uniform(index, tag, draw)
        u2 = self.uniform(index, tag, draw + 1)
        # 1 - u1 lies in (0, 1], so the log is finite
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(seed: int, *parts: int) -> int:
    """Fold nonnegative integers into ``seed``, one block evaluation
    per part, yielding an independent 64-bit child seed."""
    out = int(seed) & 0xFFFFFFFFFFFFFFFF
    for part in parts:
        part = int(part)
        if not 0 <= part < _MAX_INDEX:
            raise ValueError(f"derive part {part} outside [0, {_MAX_INDEX})")
        y0, y1 = CounterRng(out).raw_words(part, TAG_DERIVE)
        out = (int(y0) << 32) | int(y1)
    return out
