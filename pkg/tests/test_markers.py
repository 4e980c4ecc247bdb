import re

import numpy as np
from hypothesis import given, settings, strategies as st

from ergolab.partitions import NameWindow
from ergolab.perturbations.markers import marker_mask, marker_scan, zero_run_around


def naive(bits, N):
    s = "".join(map(str, bits))
    pat = "0" * N + "1" + "0" * N
    return [m.start() + N for m in re.finditer(f"(?={pat})", s)]


def test_exact_marker():
    N = 5
    w = NameWindow(0, (0,) * N + (1,) + (0,) * N)
    assert marker_scan(w, N) == [N]


def test_short_window_has_none():
    assert marker_scan(NameWindow(0, (0, 1, 0)), 2) == []


def test_fair_bits_no_marker():
    g = np.random.default_rng(0)
    hits = 0
    for _ in range(20):
        w = NameWindow(0, tuple(g.integers(0, 2, 10_000).tolist()))
        hits += len(marker_scan(w, 22))
    assert hits == 0


@settings(max_examples=200)
@given(st.lists(st.sampled_from([0, 0, 0, 1]), max_size=120), st.integers(1, 6))
def test_marker_scan_matches_regex(bits, N):
    assert marker_scan(NameWindow(0, tuple(bits)), N) == naive(bits, N)


def test_marker_mask_rows():
    x = np.array([[0, 0, 1, 0, 0, 1], [1, 0, 0, 1, 0, 0]])
    m = marker_mask(x, 2)
    assert m.tolist() == [[False, False, True, False, False, False],
                          [False, False, False, True, False, False]]


def test_zero_run_around():
    x = np.array([1, 0, 0, 1, 0, 0, 0, 1])
    assert zero_run_around(x, 3) == (2, 3)
    assert zero_run_around(x, 0) == (0, 2)
