import functools
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergolab.errors import ConfigError, InsufficientCodewords
from ergolab.partitions import Partition, name_window, partition_distance, sturmian_partition, symbol_partition
from ergolab.perturbations.relabel import (RelabelBook, codeword_allocator, codeword_matches,
                                           decode_relabel_segment, decode_relabel_window,
                                           evaluate_relabel, generator_relabel, unshadowed)
from ergolab.rng import RngStream
from ergolab.systems import BernoulliShift, Product, Rotation, sample_point

ALPHA = math.sqrt(2) - 1
SPEC = Product(Rotation(ALPHA), BernoulliShift((0.5, 0.5)))
P = symbol_partition(2, (1,), offset=1, label_count=3)
Q = sturmian_partition(ALPHA, (0,), labels=(1, 2), label_count=3)


def w(s):
    return bytes(int(c) for c in s)


@functools.lru_cache(maxsize=None)
def small_relabel():
    # eps=1, N=60: L=20 and capacity floor(e^0.6)=1, so most columns are exceptional
    return generator_relabel(P, Q, SPEC, 1.0, 60, RngStream(4), n_columns=5000,
                             n_block_samples=4096)


# -- allocator -----------------------------------------------------------------

def test_allocator_example():
    forb = {w("000"), w("001"), w("010"), w("011")}
    assert codeword_allocator(forb, 3, 2) == [(1, 0, 0), (1, 0, 1)]


def test_allocator_all_words():
    out = codeword_allocator(set(), 3, 8)
    assert out == list(itertools.product(range(2), repeat=3))


def test_allocator_insufficient():
    with pytest.raises(InsufficientCodewords):
        codeword_allocator({w("00"), w("01")}, 2, 3)
    # enough words in count, but radius 1 blocks them
    with pytest.raises(InsufficientCodewords):
        codeword_allocator({w("00"), w("11")}, 2, 1, radius=1)


def test_allocator_radius_one():
    out = codeword_allocator({w("0000")}, 4, 3, radius=1)
    assert out == [(0, 0, 1, 1), (0, 1, 0, 1), (0, 1, 1, 0)]


@settings(max_examples=100)
@given(st.integers(2, 3), st.integers(1, 5), st.data())
def test_allocator_is_lexicographic_first(a, L, data):
    universe = list(itertools.product(range(a), repeat=L))
    forb = data.draw(st.sets(st.sampled_from(universe)))
    m = data.draw(st.integers(0, len(universe) - len(forb)))
    out = codeword_allocator({bytes(f) for f in forb}, L, m, a)
    assert out == [u for u in universe if u not in forb][:m]


def test_allocator_bad_args():
    with pytest.raises(ConfigError):
        codeword_allocator(set(), 0, 1)
    with pytest.raises(ConfigError):
        codeword_allocator(set(), 2, 1, radius=2)


# -- matching and decoding -------------------------------------------------------

def random_book(g, L=6, a=3, n_c=3, n_d=4):
    words = np.array(codeword_allocator(set(), L, n_c + n_d + 1, a), dtype=np.uint8)
    words = words[g.permutation(len(words))]
    c_names = tuple((50, bytes(g.integers(1, 3, 50).astype(np.uint8))) for _ in range(n_c))
    d_names = tuple(sorted({bytes(g.integers(1, 3, L).astype(np.uint8)) for _ in range(n_d)}))
    words = words[:n_c + len(d_names) + 1]
    return RelabelBook(L, a, c_names, d_names, words)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_hash_matches_equal_naive(seed):
    g = np.random.default_rng(seed)
    book = random_book(g)
    x = g.integers(0, 3, 400).astype(np.uint8)
    for i in g.integers(0, 390, 10).tolist():
        x[i:i + book.L] = book.words[g.integers(len(book.words))]
    pos, idx = codeword_matches(x, book)
    naive = [(p, book.lookup(x[p:p + book.L].tobytes())) for p in range(len(x) - book.L + 1)]
    naive = [(p, i) for p, i in naive if i >= 0]
    assert list(zip(pos.tolist(), idx.tolist())) == naive


def test_unshadowed():
    assert unshadowed(np.array([0, 3, 10, 12, 20]), 4).tolist() == [True, False, True, False, True]


def test_window_decoder_paths():
    L = 3
    words = np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=np.uint8)
    book = RelabelBook(L, 3, ((8, w("12121212")),), (w("221"),), words)
    # C-word at position 2: Q read from the stored name
    x = np.array([1, 2, 0, 0, 0, 2, 1, 2, 1], dtype=np.uint8)
    assert decode_relabel_window(x, book) == w("12121212")[2]
    # D-word: first L offsets from the stored prefix, then the label itself
    x = np.array([1, 2, 0, 0, 1, 2, 2, 1, 1], dtype=np.uint8)
    assert decode_relabel_window(x, book) == 1   # offset 2 of "221"
    x = np.array([1, 2, 0, 0, 1, 2, 2, 1, 1, 1, 1, 1, 1], dtype=np.uint8)
    assert decode_relabel_window(x, book) == 2   # offset 4 >= L: own label x[6]
    # a match needs L-1 symbols of left context to rule out shadowing
    x = np.array([0, 0, 1, 2, 2, 1, 2, 1, 1], dtype=np.uint8)
    assert decode_relabel_window(x, book) == -1
    # reserved word before own-label region: failure
    x = np.array([1, 2, 2, 0, 1, 0, 2, 1, 1], dtype=np.uint8)
    assert decode_relabel_window(x, book) == -1
    # no codeword at all
    assert decode_relabel_window(np.full(9, 2, np.uint8), book) == -1


def test_book_roundtrip_and_validation():
    book = random_book(np.random.default_rng(0))
    assert RelabelBook.from_dict(book.to_dict()).to_dict() == book.to_dict()
    with pytest.raises(ConfigError):
        RelabelBook(2, 2, (), (), np.array([[0, 0], [0, 1]]))


# -- the construction ------------------------------------------------------------

def test_construction_parameters():
    res = small_relabel()
    assert res.L == 20 and res.capacity == 1 and res.min_window == 81
    assert all(v > res.capacity for v in res.name_counts.values())
    assert res.exceptional_fraction > 0.5
    # codewords avoid every observed P and Q block
    P_blocks = set(name_window(P, sample_point(SPEC, RngStream(1)), 0, 5000).labels)
    assert 0 not in P_blocks
    assert all(0 in row for row in res.book.words.tolist())


def test_decoder_recovers_q_with_exceptional_columns(rng):
    res = small_relabel()
    st_ = evaluate_relabel(res, Q, SPEC, res.min_window, 8192, rng, n_columns=2000)
    assert st_.n_unresolved == 0
    assert st_.decoder_error.mean == 0.0
    assert st_.exceptional_fraction > 0.5


def test_window_and_segment_decoders_agree(rng):
    res = small_relabel()
    n = res.min_window
    x = sample_point(SPEC, rng)
    lab = name_window(res.Phat, x, -n, 3000 + n).array()
    times = np.arange(0, 3001)
    seg = decode_relabel_segment(lab, -n, times, n, res.book)
    win = [decode_relabel_window(lab[t:t + 2 * n + 1], res.book) for t in times.tolist()]
    assert seg.tolist() == win
    q = name_window(Q, x, 0, 3000).array()
    assert np.array_equal(seg, q)


def test_window_too_short(rng):
    res = small_relabel()
    with pytest.raises(ConfigError):
        evaluate_relabel(res, Q, SPEC, res.min_window - 1, 100, rng)


def test_distance_grows_with_exceptional_columns(rng):
    res = small_relabel()
    d = partition_distance(P, res.Phat, SPEC, 8192, rng)
    # exceptional columns carry Q wholesale, which disagrees with P about half the time
    assert d.mean > 0.2


def test_serialization(rng):
    res = small_relabel()
    back = Partition.from_dict(res.Phat.to_dict())
    x = sample_point(SPEC, rng)
    assert name_window(back, x, 0, 800) == name_window(res.Phat, x, 0, 800)


def test_rejects_mismatched_alphabets():
    with pytest.raises(ConfigError):
        generator_relabel(symbol_partition(2, (1,)), Q, SPEC, 1.0, 60, RngStream(0))
    with pytest.raises(ConfigError):
        generator_relabel(P, Q, SPEC, 1.5, 60, RngStream(0))
