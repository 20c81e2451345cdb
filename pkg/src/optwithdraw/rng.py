"""Philox4x32-10 counter-based generator, usable inside numba kernels.

A stream is addressed by (seed, path, step); nothing is carried between
draws, so any partition of paths over workers reproduces the same numbers.
Counter words are (index, stream_id, path_lo, path_hi) and the key is the
64-bit seed split into two words.
"""

from __future__ import annotations

import math
import os

import numpy as np
import numba
from numba import njit, prange

# the bundled TBB is too old for numba; OpenMP avoids a warning on first parallel call
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

M0 = np.uint64(0xD2511F53)
M1 = np.uint64(0xCD9E8D57)
W0 = np.uint32(0x9E3779B9)
W1 = np.uint32(0xBB67AE85)
MASK32 = np.uint64(0xFFFFFFFF)

STREAM_NORMAL = 0
STREAM_UNIFORM = 1

_TWO_PI = 2.0 * math.pi
_INV53 = 1.0 / 9007199254740992.0
_INV32 = 1.0 / 4294967296.0


@njit(cache=True, inline="always")
def _round(c0, c1, c2, c3, k0, k1):
    p0 = M0 * np.uint64(c0)
    p1 = M1 * np.uint64(c2)
    hi0 = np.uint32(p0 >> np.uint64(32))
    lo0 = np.uint32(p0 & MASK32)
    hi1 = np.uint32(p1 >> np.uint64(32))
    lo1 = np.uint32(p1 & MASK32)
    return hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0


@njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on one 128-bit counter."""
    c0, c1, c2, c3 = np.uint32(c0), np.uint32(c1), np.uint32(c2), np.uint32(c3)
    k0, k1 = np.uint32(k0), np.uint32(k1)
    for _ in range(9):
        c0, c1, c2, c3 = _round(c0, c1, c2, c3, k0, k1)
        k0 = np.uint32(k0 + W0)
        k1 = np.uint32(k1 + W1)
    return _round(c0, c1, c2, c3, k0, k1)


@njit(cache=True, inline="always")
def split_seed(seed):
    s = np.uint64(seed)
    return np.uint32(s & MASK32), np.uint32(s >> np.uint64(32))


@njit(cache=True, inline="always")
def _u53(a, b):
    # open interval (0, 1): never returns 0, so log() is safe
    return ((np.uint64(a) >> np.uint64(5)) * 67108864.0 + (np.uint64(b) >> np.uint64(6)) + 0.5) * _INV53


@njit(cache=True)
def normal_pair(k0, k1, index, path):
    """Two independent standard normals for counter ``index`` of ``path``."""
    p = np.uint64(path)
    r0, r1, r2, r3 = philox4x32(np.uint32(index), np.uint32(STREAM_NORMAL),
                                np.uint32(p & MASK32), np.uint32(p >> np.uint64(32)), k0, k1)
    u1 = _u53(r0, r1)
    u2 = _u53(r2, r3)
    rad = math.sqrt(-2.0 * math.log(u1))
    return rad * math.cos(_TWO_PI * u2), rad * math.sin(_TWO_PI * u2)


@njit(cache=True)
def normal_at(k0, k1, step, path):
    """Normal number ``step`` of ``path``; steps 2j and 2j+1 share one block."""
    z0, z1 = normal_pair(k0, k1, step >> 1, path)
    return z0 if (step & 1) == 0 else z1


@njit(cache=True)
def uniform_at(k0, k1, step, path):
    """Uniform on (0, 1) with 32-bit resolution; four steps share one block."""
    p = np.uint64(path)
    r = philox4x32(np.uint32(step >> 2), np.uint32(STREAM_UNIFORM),
                   np.uint32(p & MASK32), np.uint32(p >> np.uint64(32)), k0, k1)
    j = step & 3
    w = r[0] if j == 0 else (r[1] if j == 1 else (r[2] if j == 2 else r[3]))
    return (np.float64(w) + 0.5) * _INV32


@njit(cache=True, parallel=True)
def _normals_for_step(k0, k1, step, paths, out):
    for i in prange(paths.size):
        out[i] = normal_at(k0, k1, step, paths[i])


@njit(cache=True, parallel=True)
def _uniforms_for_step(k0, k1, step, paths, out):
    for i in prange(paths.size):
        out[i] = uniform_at(k0, k1, step, paths[i])


def seed_key(seed: int) -> tuple[int, int]:
    s = int(seed) & 0xFFFFFFFFFFFFFFFF
    return s & 0xFFFFFFFF, s >> 32


def normals(seed: int, step: int, paths) -> np.ndarray:
    """Vector of the ``step``-th normal for each path index (matches the kernels)."""
    k0, k1 = seed_key(seed)
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    out = np.empty(paths.size)
    _normals_for_step(np.uint32(k0), np.uint32(k1), step, paths, out)
    return out


def uniforms(seed: int, step: int, paths) -> np.ndarray:
    k0, k1 = seed_key(seed)
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    out = np.empty(paths.size)
    _uniforms_for_step(np.uint32(k0), np.uint32(k1), step, paths, out)
    return out


def philox_block(counter, key) -> tuple[int, int, int, int]:
    """Raw generator output, for known-answer tests."""
    r = philox4x32(*[np.uint32(c) for c in counter], np.uint32(key[0]), np.uint32(key[1]))
    return tuple(int(v) for v in r)
