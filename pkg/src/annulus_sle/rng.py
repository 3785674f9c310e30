"""Philox-4x32-10 counter-based generator, compiled for use inside numba kernels.

Every normal variate is addressed by (master seed, path index, counter, stream),
so a path's noise does not depend on how paths are split between workers.  The
32-bit variant is used because its 32x32 -> 64 multiplies are native, whereas
the 64-bit variant needs an emulated high multiply and costs four times as much.
"""

from __future__ import annotations

import math

import numpy as np
from numba import int64, njit, uint64

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S21 = np.uint64(21)
_S11 = np.uint64(11)
_S16 = np.uint64(16)
_TWO_M52 = 2.0 ** -52


@njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox on a 4x32-bit counter with a 2x32-bit key."""
    c0 = uint64(c0) & _MASK32
    c1 = uint64(c1) & _MASK32
    c2 = uint64(c2) & _MASK32
    c3 = uint64(c3) & _MASK32
    k0 = uint64(k0) & _MASK32
    k1 = uint64(k1) & _MASK32
    for rnd in range(10):
        if rnd > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _S32) ^ c1 ^ k0, p1 & _MASK32, (p0 >> _S32) ^ c3 ^ k1, p0 & _MASK32
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def _unit(hi, lo):
    # uniform on (-1, 1) from 53 bits: all of one word and the top 21 of the other
    return int64((hi << _S21) | (lo >> _S11)) * _TWO_M52 - 1.0


@njit(cache=True)
def normal_pair(seed, path, counter, stream):
    """Two independent standard normals for (seed, path, counter, stream).

    Marsaglia's polar method on one Philox block; a rejected block is redrawn
    with the attempt number in the high half of the stream word.  ``counter``
    and ``stream`` must stay below 2^32 and 2^16.
    """
    k0 = uint64(seed) & _MASK32
    k1 = uint64(seed) >> _S32
    pl = uint64(path)
    st = uint64(stream)
    attempt = uint64(0)
    while True:
        o0, o1, o2, o3 = philox4x32(counter, pl >> _S32, pl, st | (attempt << _S16), k0, k1)
        u = _unit(o0, o1)
        v = _unit(o2, o3)
        q = u * u + v * v
        if 0.0 < q < 1.0:
            f = math.sqrt(-2.0 * math.log(q) / q)
            return u * f, v * f
        attempt += uint64(1)


def derive_key(master_seed: int) -> int:
    """Fold an arbitrary integer seed into 64 bits."""
    return int(master_seed) & 0xFFFFFFFFFFFFFFFF


def entropy_seed() -> int:
    return int(np.random.SeedSequence().entropy) & 0xFFFFFFFFFFFFFFFF
