"""Compiled inner loops (numba).

All random symbols are drawn from a counter-based generator: the uniform
attached to global time ``t`` of a stream with key ``k`` is

    u(k, t) = (mix64(k + t * GOLDEN) >> 11) * 2**-53

where ``mix64`` is the splitmix64 finalizer and arithmetic wraps modulo
2**64.  Draws are therefore addressable by time, which is what lets shift
points extend their windows in either direction without storing state.
"""

import numba as nb
import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_G = np.uint64(GOLDEN)
_M1 = np.uint64(_MUL1)
_M2 = np.uint64(_MUL2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always")
def _uniform(key, t):
    z = _mix(key + np.uint64(t) * _G)
    return np.float64(z >> _S11) * _INV53


@nb.njit(cache=True, nogil=True)
def mix64_array(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = _mix(x[i])
    return out


@nb.njit(cache=True, nogil=True)
def uniforms(key, t0, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = _uniform(key, t0 + i)
    return out


def thresholds(cdf):
    """Integer thresholds: symbol = #{j : (z >> 11) >= thr[j]} reproduces u < cdf[s]."""
    import math
    return np.array([math.ceil(float(c) * 2.0**53) for c in cdf[:-1]], dtype=np.uint64)


@nb.njit(cache=True, nogil=True)
def iid_fill(keys, t0, n, thr):
    """Symbols at global times t0..t0+n-1 for each key (rows).

    The symbol is the number of thresholds not exceeding the 53-bit integer
    behind u(k, t); see :func:`thresholds`.
    """
    S = keys.shape[0]
    a1 = thr.shape[0]
    out = np.empty((S, n), dtype=np.uint8)
    base = np.uint64(t0)
    for r in range(S):
        k = keys[r]
        for i in range(n):
            m = _mix(k + (base + np.uint64(i)) * _G) >> _S11
            s = 0
            for j in range(a1):
                s += m >= thr[j]
            out[r, i] = s
    return out


@nb.njit(cache=True, nogil=True)
def chain_walk(key, t0, n, step, prev, cdf):
    """Sequential chain draws at times t0, t0+step, ... from state ``prev``.

    ``cdf[i]`` is the cumulative row of the transition kernel out of state i.
    """
    a = cdf.shape[1]
    out = np.empty(n, dtype=np.uint8)
    x = prev
    for i in range(n):
        u = _uniform(key, t0 + i * step)
        s = 0
        while s < a - 1 and u >= cdf[x, s]:
            s += 1
        out[i] = s
        x = s
    return out


@nb.njit(cache=True, nogil=True)
def word_starts(row, word):
    """Boolean mask m with m[i] True iff row[i:i+len(word)] == word.

    Boyer-Moore scan with the full bad-character table: on a mismatch at word
    offset j against symbol c the window jumps to align the last c in
    word[:j], or past it if there is none.
    """
    n = row.shape[0]
    L = word.shape[0]
    m = max(n - L + 1, 0)
    out = np.zeros(m, dtype=np.bool_)
    shift = np.empty((L, 256), dtype=np.int64)
    for c in range(256):
        last = -1
        for j in range(L):
            shift[j, c] = j - last
            if word[j] == c:
                last = j
    i = 0
    while i < m:
        j = L - 1
        while j >= 0 and row[i + j] == word[j]:
            j -= 1
        if j < 0:
            out[i] = True
            i += 1
        else:
            i += shift[j, row[i + j]]
    return out
