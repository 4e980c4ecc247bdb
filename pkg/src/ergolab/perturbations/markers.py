"""Marker words 0^N 1 0^N and their detection in label sequences."""

from __future__ import annotations

import numpy as np

from ..partitions import NameWindow


def zero_windows(x: np.ndarray, N: int) -> np.ndarray:
    """z[..., i] True iff x[..., i:i+N] is all zeros (last axis)."""
    zero = (x == 0).astype(np.int32)
    cs = np.zeros(zero.shape[:-1] + (zero.shape[-1] + 1,), dtype=np.int32)
    np.cumsum(zero, axis=-1, out=cs[..., 1:])
    return (cs[..., N:] - cs[..., :-N]) == N


def marker_mask(x: np.ndarray, N: int) -> np.ndarray:
    """m[..., c] True iff the marker 0^N 1 0^N is centred at position c.

    Works on the last axis of ``x``; positions without room for the full
    marker are False.
    """
    x = np.asarray(x)
    L = x.shape[-1]
    out = np.zeros(x.shape, dtype=bool)
    if L < 2 * N + 1:
        return out
    z = zero_windows(x, N)
    c = np.arange(N, L - N)
    out[..., N:L - N] = (x[..., c] == 1) & z[..., c - N] & z[..., c + 1]
    return out


def marker_positions(x: np.ndarray, N: int) -> np.ndarray:
    return np.flatnonzero(marker_mask(np.asarray(x).reshape(-1), N))


def marker_scan(w: NameWindow, N: int) -> list[int]:
    """Positions (window indices of the central 1) of every 0^N 1 0^N in ``w``."""
    return marker_positions(w.array(), N).tolist()


def zero_run_around(x: np.ndarray, c: int) -> tuple[int, int]:
    """Lengths of the zero runs immediately left and right of position c."""
    left = 0
    while c - left - 1 >= 0 and x[c - left - 1] == 0:
        left += 1
    right = 0
    while c + right + 1 < len(x) and x[c + right + 1] == 0:
        right += 1
    return left, right
