import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergolab.errors import ConfigError
from ergolab.partitions import (LevelLayer, NameWindow, Partition, label_at, name_window,
                                partition_distance, partition_key, rokhlin_metric,
                                interval_partition, sturmian_partition, symbol_partition,
                                windows_to_csv)
from ergolab.queries import Interval, Word
from ergolab.rng import RngStream
from ergolab.sampling import SamplingPlan, map_chunks
from ergolab.systems import BernoulliShift, Product, Rotation, rotation_point, sample_point
from ergolab.towers import LevelSet, build_tower, locate, locate_range

ALPHA = math.sqrt(2) - 1
ROT = Rotation(ALPHA)
FAIR = BernoulliShift((0.5, 0.5))
HALF = interval_partition(0.0, 0.5)


def sturmian_words_oracle(alpha, n):
    """Distinct n-blocks of the coding by [0, 1-alpha): one word per cell between breakpoints.

    The coding of x + i*alpha changes at x = -i*alpha and x = 1 - (i+1)*alpha, i.e. at
    -j*alpha for j = 0..n.
    """
    cuts = sorted((-j * alpha) % 1 for j in range(n + 1))
    cuts = cuts + [cuts[0] + 1]
    words = set()
    for a, b in zip(cuts[:-1], cuts[1:]):
        x = ((a + b) / 2) % 1
        words.add(tuple(0 if (x + i * alpha) % 1 < 1 - alpha else 1 for i in range(n)))
    return words


def test_label_at_examples():
    assert label_at(HALF, rotation_point(Rotation(0.3), 0.25), 0) == 0
    assert label_at(HALF, rotation_point(Rotation(0.3), 0.25), 1) == 1


def test_override_wins():
    t = build_tower(ROT, Interval(0.0, 0.003), 10, rng=RngStream(1))
    P = HALF.with_layers(LevelLayer(t, LevelSet(ranges=((0, 1),)), 1))
    b = rotation_point(ROT, 0.001)
    assert label_at(HALF, b, 0) == 0
    assert label_at(P, b, 0) == 1


def test_override_layering_off_tower_levels_unchanged(rng):
    t = build_tower(ROT, Interval(0.0, 0.003), 10, rng=RngStream(1))
    P = HALF.with_layers(LevelLayer(t, LevelSet(ranges=((2, 4),)), 1))
    x = sample_point(ROT, rng)
    base = name_window(HALF, x, 0, 3000).array()
    mod = name_window(P, x, 0, 3000).array()
    loc = locate_range(t, x, 0, 3000)
    touched = loc.ok & (loc.level >= 2) & (loc.level < 4)
    assert np.array_equal(mod[~touched], base[~touched])
    assert np.all(mod[touched] == 1)


def test_name_window_single(rng):
    x = sample_point(FAIR, rng)
    P = symbol_partition(2)
    w = name_window(P, x, 0, 0)
    assert w.labels == (label_at(P, x, 0),)
    with pytest.raises(ValueError):
        name_window(P, x, 1, 0)


def test_name_window_is_joined_atom(rng):
    x = sample_point(FAIR, rng)
    P = symbol_partition(2)
    w = name_window(P, x, -4, 6)
    assert w.offset == -4 and len(w) == 11
    assert list(w.labels) == [label_at(P, x, i) for i in range(-4, 7)]


def test_fair_bits_per_position(rng):
    P = symbol_partition(2)
    plan = SamplingPlan("independent")
    parts = map_chunks(FAIR, 10_000, rng, lambda c: c.windows(P, 0, 9)[0], plan)
    lab = np.concatenate(parts)
    assert np.all(np.abs((lab == 0).mean(axis=0) - 0.5) < 0.02)


def test_sturmian_ten_blocks(rng):
    oracle = sturmian_words_oracle(ALPHA, 10)
    assert len(oracle) == 11
    P = sturmian_partition(ALPHA)
    parts = map_chunks(ROT, 100_000, rng, lambda c: c.windows(P, 0, 9)[0],
                       SamplingPlan("independent"))
    seen = {tuple(r) for r in np.concatenate(parts).tolist()}
    assert seen == oracle


def test_distance_self_zero(rng):
    d = partition_distance(HALF, HALF, ROT, 10_000, rng)
    assert d.mean == 0.0 and d.half_width == 0.0


def test_distance_shifted_interval(rng):
    d = partition_distance(HALF, interval_partition(0.1, 0.6), ROT, 100_000, rng)
    assert abs(d.mean - 0.2) <= max(d.half_width * 1.5, 0.005)


def test_distance_independent_symbols(rng):
    d = partition_distance(symbol_partition(2), symbol_partition(2, time=1), FAIR, 100_000, rng)
    assert abs(d.mean - 0.5) <= 1.5 * d.half_width


def test_distance_label_count_mismatch(rng):
    with pytest.raises(ConfigError):
        partition_distance(symbol_partition(2), symbol_partition(3), FAIR, 100, rng)


def test_rokhlin_self_zero(rng):
    assert rokhlin_metric(HALF, HALF, ROT, 10_000, rng).mean == pytest.approx(0.0, abs=1e-12)


def test_rokhlin_independent(rng):
    r = rokhlin_metric(symbol_partition(2), symbol_partition(2, time=1), FAIR, 100_000, rng)
    assert abs(r.mean - 2.0) < 0.02


def two_bits():
    words = [(0, 0), (0, 1), (1, 0)]
    return Partition(4, tuple((Word(w), i) for i, w in enumerate(words)), 3)


def test_rokhlin_refinement(rng):
    # exact joint law: P = first bit, Q = (first, second); H(Q|P) = 1, H(P|Q) = 0
    joint = np.zeros((2, 4))
    for b0 in (0, 1):
        for b1 in (0, 1):
            joint[b0, 2 * b0 + b1] = 0.25
    pp = joint.sum(1)
    h = lambda p: -sum(v * math.log2(v) for v in p.ravel() if v > 0)
    oracle = 2 * h(joint) - h(pp) - h(joint.sum(0))
    assert oracle == pytest.approx(1.0)
    r = rokhlin_metric(symbol_partition(2), two_bits(), FAIR, 100_000, rng)
    assert abs(r.mean - oracle) < 0.02


def test_rokhlin_without_miller_madow(rng):
    a = rokhlin_metric(symbol_partition(2), two_bits(), FAIR, 20_000, rng, miller_madow=False)
    b = rokhlin_metric(symbol_partition(2), two_bits(), FAIR, 20_000, rng)
    assert b.mean > a.mean


def random_partition(g, labels=3):
    words = list(np.ndindex(2, 2))
    f = g.integers(labels, size=len(words))
    return Partition(labels, tuple((Word(w), int(l)) for w, l in zip(words[:-1], f[:-1])), int(f[-1]))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_metric_axioms_random(seed):
    g = np.random.default_rng(seed)
    P, Q, R = (random_partition(g) for _ in range(3))
    rng = RngStream(seed)
    d = lambda A, B: partition_distance(A, B, FAIR, 8192, rng)
    pq, qp, qr, pr = d(P, Q), d(Q, P), d(Q, R), d(P, R)
    assert pq.mean == qp.mean
    assert pr.mean <= pq.mean + qr.mean + 3 * (pq.half_width + qr.half_width + pr.half_width)
    if pq.mean == 0:
        rho = rokhlin_metric(P, Q, FAIR, 8192, rng)
        assert rho.mean <= rho.half_width + 1e-9


def test_labels_validated():
    with pytest.raises(ConfigError):
        Partition(2, ((Word((1,)), 2),), 0)
    with pytest.raises(ConfigError):
        Partition(1)


def test_name_window_csv():
    ws = [NameWindow(-3, (0, 1, 1, 0)), NameWindow(5, (2, 0, 11))]
    text = windows_to_csv(ws)
    rows = text.splitlines()
    assert rows[0] == "offset,labels"
    assert rows[1] == "-3,0110"
    assert [NameWindow.from_csv_row(r) for r in rows[1:]] == ws


def test_partition_roundtrip_with_layers(rng):
    t = build_tower(ROT, Interval(0.0, 0.003), 10, rng=RngStream(1))
    P = HALF.with_layers(LevelLayer(t, LevelSet(ranges=((0, 3),)), 1, (10,)),
                         LevelLayer(t, LevelSet(progressions=((4, 2, None),)), 0))
    d = json.loads(json.dumps(P.to_dict()))
    Q = Partition.from_dict(d)
    assert Q.to_dict() == P.to_dict()
    assert partition_key(Q) == partition_key(P)
    x = sample_point(ROT, rng)
    assert name_window(P, x, 0, 500) == name_window(Q, x, 0, 500)


def test_partition_roundtrip_product():
    spec = Product(ROT, FAIR)
    P = symbol_partition(2, component=(1,), offset=1, label_count=3)
    Q = Partition.from_dict(P.to_dict())
    x = sample_point(spec, RngStream(2))
    assert name_window(P, x, 0, 50) == name_window(Q, x, 0, 50)
    assert set(name_window(P, x, 0, 50).labels) <= {1, 2}


def test_unknown_partition_field():
    d = HALF.to_dict()
    d["colour"] = 1
    with pytest.raises(ConfigError):
        Partition.from_dict(d)
