import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ergolab.errors import ConfigError, WindowTooLarge
from ergolab.queries import Cylinder, Interval, Whole, Word
from ergolab.rng import RngStream, child_keys
from ergolab.systems import (UNRESOLVED_TIME, BernoulliShift, MarkovShift, Product, Rotation,
                             RotationPoint, ShiftPoint, first_entry_time, first_entry_times, orbit_window,
                             rotation_point, sample_point, sample_points, set_window_cap,
                             spec_from_dict, spec_from_json, stationary_vector)
import ergolab.systems as systems

ALPHA = math.sqrt(2) - 1
MARKOV = MarkovShift(((0.9, 0.1), (0.2, 0.8)))


def power_iteration(M, steps=2000):
    v = np.full(len(M), 1.0 / len(M))
    for _ in range(steps):
        v = v @ np.asarray(M)
    return v


# -- specs -------------------------------------------------------------------

def test_probabilities_validated():
    with pytest.raises(ConfigError):
        BernoulliShift((0.5, 0.6))
    with pytest.raises(ConfigError):
        BernoulliShift((1.2, -0.2))
    BernoulliShift((0.5, 0.5 + 5e-13))


def test_markov_stationary_checked():
    with pytest.raises(ConfigError):
        MarkovShift(((0.9, 0.1), (0.2, 0.8)), (0.5, 0.5))
    m = MarkovShift(((0.9, 0.1), (0.2, 0.8)), (2 / 3, 1 / 3))
    assert np.allclose(m.stationary, power_iteration(m.matrix), atol=1e-12)


def test_stationary_vector_matches_power_iteration():
    M = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.4, 0.4, 0.2]])
    assert np.allclose(stationary_vector(M), power_iteration(M), atol=1e-12)


def test_product_whitelist():
    Product(Rotation(ALPHA), BernoulliShift((0.5, 0.5)))
    Product(MARKOV, Rotation(ALPHA))
    with pytest.raises(ConfigError):
        Product(Rotation(ALPHA), Rotation(0.3))
    with pytest.raises(ConfigError):
        Product(BernoulliShift((0.5, 0.5)), MARKOV)


def test_rotation_angle_range():
    with pytest.raises(ConfigError):
        Rotation(1.0)
    with pytest.raises(ConfigError):
        Rotation(0.0)


@pytest.mark.parametrize("spec", [
    Rotation(ALPHA), BernoulliShift((0.2, 0.3, 0.5)), MARKOV,
    Product(Rotation(ALPHA), BernoulliShift((0.5, 0.5))),
])
def test_json_roundtrip(spec):
    assert spec_from_json(spec.to_json()) == spec
    assert spec_from_dict(json.loads(spec.to_json())).to_json() == spec.to_json()


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        spec_from_dict({"kind": "tent"})
    with pytest.raises(ConfigError):
        spec_from_dict({"kind": "rotation", "alpha": 0.3, "beta": 1})


# -- sampling ----------------------------------------------------------------

def test_bernoulli_time_zero_marginal(rng):
    p = sample_points(BernoulliShift((0.5, 0.5)), rng, 100_000)
    assert abs((p.symbols(0, 0) == 0).mean() - 0.5) < 0.01


def test_rotation_uniform_ks(rng):
    x = sample_points(Rotation(ALPHA), rng, 20_000).coords(0, 0)[:, 0]
    res = stats.kstest(x, "uniform")
    assert res.pvalue > 0.01
    assert x.min() >= 0 and x.max() < 1


def test_markov_marginal_matches_oracle(rng):
    oracle = power_iteration(MARKOV.matrix)
    p = sample_points(MARKOV, rng, 100_000)
    s = p.symbols(0, 0)[:, 0]
    assert abs((s == 0).mean() - oracle[0]) < 0.01


def test_markov_transitions(rng):
    p = sample_points(MARKOV, rng, 50_000)
    s = p.symbols(-3, 3)
    for t in (0, 5):
        a, b = s[:, t], s[:, t + 1]
        assert abs((b[a == 0] == 0).mean() - 0.9) < 0.01
        assert abs((b[a == 1] == 1).mean() - 0.8) < 0.015


def test_sample_points_rows_equal_single_samples(rng):
    spec = Product(Rotation(ALPHA), MARKOV)
    batch = sample_points(spec, rng, 6, start=3)
    for j in range(6):
        one = sample_point(spec, rng.child(3 + j))
        assert np.array_equal(batch.left.coords_fixed(-4, 4)[j], one.left.coords_fixed(-4, 4)[0])
        assert np.array_equal(batch.right.symbols(-20, 20)[j], one.right.symbols(-20, 20)[0])


# -- orbit windows -------------------------------------------------------------

def test_rotation_orbit_step():
    x = rotation_point(Rotation(0.3), 0.25)
    orbit_window(x, 3, 3)
    assert x.coords(3, 3)[0, 0] == pytest.approx((0.25 + 0.9) % 1, abs=1e-15)


@given(st.floats(0, 1, exclude_max=True), st.integers(-10**6, 10**6))
def test_rotation_stays_in_unit_interval(x, t):
    p = rotation_point(Rotation(ALPHA), x)
    c = p.coords(t, t)[0, 0]
    assert 0.0 <= c < 1.0
    assert min(abs(c - (x + t * ALPHA) % 1), 1 - abs(c - (x + t * ALPHA) % 1)) < 1e-6


def test_shift_window_extension_consistent(rng):
    for spec in (BernoulliShift((0.3, 0.7)), MARKOV):
        p = sample_point(spec, rng)
        inner = orbit_window(p, -5, 5).symbols(-5, 5).copy()
        orbit_window(p, -10, 10)
        assert np.array_equal(p.symbols(-5, 5), inner)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(-6000, 0), st.integers(0, 6000),
       st.integers(-6000, 0), st.integers(0, 6000))
def test_two_extensions_equal_one(seed, a, b, c, d):
    for spec in (BernoulliShift((0.5, 0.5)), MARKOV):
        p = sample_point(spec, RngStream(seed))
        p.ensure(a, b)
        p.ensure(c, d)
        q = sample_point(spec, RngStream(seed))
        q.ensure(min(a, c), max(b, d))
        lo, hi = min(a, c), max(b, d)
        assert np.array_equal(p.symbols(lo, hi), q.symbols(lo, hi))


def test_product_components_equal_standalone(rng):
    spec = Product(Rotation(ALPHA), BernoulliShift((0.5, 0.5)))
    p = sample_point(spec, rng)
    keys = np.array([rng.key], dtype=np.uint64)
    right = ShiftPoint(spec.right, child_keys(keys, 1))
    assert np.array_equal(p.right.symbols(-50, 50), right.symbols(-50, 50))
    assert np.array_equal(p.component((1,)).symbols(0, 9), right.symbols(0, 9))


def test_determinism_byte_for_byte():
    spec = Product(Rotation(ALPHA), MARKOV)
    a = sample_point(spec, RngStream(5, 9))
    b = sample_point(spec, RngStream(5, 9))
    assert a.left.coords_fixed(-100, 100).tobytes() == b.left.coords_fixed(-100, 100).tobytes()
    assert a.right.symbols(-100, 100).tobytes() == b.right.symbols(-100, 100).tobytes()


def test_window_cap(rng):
    p = sample_point(BernoulliShift((0.5, 0.5)), rng)
    old = systems.WINDOW_CAP
    set_window_cap(1000)
    try:
        with pytest.raises(WindowTooLarge):
            orbit_window(p, 0, 5000)
    finally:
        set_window_cap(old)


def test_orbit_window_order():
    with pytest.raises(ValueError):
        orbit_window(rotation_point(Rotation(ALPHA), 0.1), 2, 1)


# -- first entry ---------------------------------------------------------------

def test_first_return_rotation_example():
    spec = Rotation(0.41421356237309503)
    x = rotation_point(spec, 0.2)
    orbit = [(0.2 + t * spec.alpha) % 1 for t in range(3)]
    oracle = next(t for t in range(1, 3) if orbit[t] < 0.45)
    assert oracle == 2
    assert first_entry_time(x, Interval(0.0, 0.45)) == 2


def test_first_entry_backward():
    spec = Rotation(0.3)
    x = rotation_point(spec, 0.5)
    # x - 0.3 = 0.2, x - 0.6 = 0.9, x - 0.9 = 0.6, x - 1.2 = 0.3
    assert first_entry_time(x, Interval(0.85, 0.95), "backward") == -2


def test_whole_space_returns_one(rng):
    for spec in (Rotation(ALPHA), MARKOV):
        assert first_entry_time(sample_point(spec, rng), Whole()) == 1


def test_small_budget_mostly_unresolved(rng):
    p = sample_points(BernoulliShift((0.5, 0.5)), rng, 2000)
    t = first_entry_times(p, Word((1,) * 10), budget=5)
    assert (t == UNRESOLVED_TIME).mean() > 0.95
    assert first_entry_time(p.row(int(np.argmax(t == UNRESOLVED_TIME))), Word((1,) * 10),
                            budget=5) is None


def test_invalid_budget(rng):
    with pytest.raises(ValueError):
        first_entry_times(sample_point(MARKOV, rng), Whole(), budget=0)


@pytest.mark.parametrize("spec,query", [
    (Rotation(ALPHA), Interval(0.2, 0.35)),
    (BernoulliShift((0.3, 0.7)), Word((0, 1))),
    (MARKOV, Cylinder(0, 1)),
])
def test_measure_preservation(spec, query, rng):
    p = sample_points(spec, rng, 20_000)
    m = query.contains(p, -7, 7).astype(float)
    base = m[:, 7].mean()
    se = math.sqrt(base * (1 - base) / m.shape[0])
    for i in (0, 3, 14):
        assert abs(m[:, i].mean() - base) < 3 * math.sqrt(2) * se + 1e-12


@pytest.mark.parametrize("spec,query", [
    (Rotation(ALPHA), Interval(0.1, 0.2)),
    (BernoulliShift((0.3, 0.7)), Cylinder(0, 0)),
    (MARKOV, Cylinder(0, 1)),
])
def test_kac_return_time(spec, query, rng):
    p = sample_points(spec, rng, 100_000)
    inside = query.contains(p, 0, 0)[:, 0]
    mu = inside.mean()
    rows = np.flatnonzero(inside)
    if isinstance(spec, Rotation):
        sub = RotationPoint(spec, p.x0[rows])
    else:
        sub = ShiftPoint(spec, p.keys[rows])
    t = first_entry_times(sub, query, "forward", budget=10_000)
    assert (t != UNRESOLVED_TIME).all()
    assert abs(t.mean() * mu - 1.0) < 0.05
