import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergolab.partitions import symbol_partition
from ergolab.rng import RngStream
from ergolab.sampling import CHUNK_SIZE, SamplingPlan, chunk_sizes, map_chunks
from ergolab.stats import Z975, Moments, combine, entropy_bits
from ergolab.systems import BernoulliShift

FAIR = BernoulliShift((0.5, 0.5))


@given(st.lists(st.floats(0, 1), min_size=2, max_size=200))
def test_half_width_formula(values):
    v = np.array(values)
    est = combine([Moments.of(v)])
    assert est.mean == pytest.approx(v.mean(), abs=1e-12)
    assert est.half_width == pytest.approx(Z975 * math.sqrt(v.var(ddof=1) / v.size), abs=1e-9)
    assert est.n_samples == v.size


def test_combine_order_and_clustering():
    a, b = Moments.of(np.zeros(100)), Moments.of(np.ones(100))
    plain = combine([a, b])
    clustered = combine([a, b], clustered=True)
    assert plain.mean == clustered.mean == 0.5
    assert clustered.half_width > plain.half_width
    assert math.isnan(combine([Moments()]).mean)


def test_entropy_bits():
    h, se = entropy_bits([50, 50], miller_madow=False)
    assert h == pytest.approx(1.0) and se == pytest.approx(0.0)
    h2, _ = entropy_bits([50, 50])
    assert h2 == pytest.approx(1.0 + 1 / (2 * 100 * math.log(2)))
    assert entropy_bits([0, 0]) == (0.0, 0.0)


def test_chunk_sizes():
    assert chunk_sizes(10_000) == [CHUNK_SIZE, CHUNK_SIZE, 10_000 - 2 * CHUNK_SIZE]
    assert chunk_sizes(4096) == [4096]


def test_plan_resolution():
    P = symbol_partition(2)
    assert SamplingPlan().resolve(P).mode == "independent"
    assert SamplingPlan("segment").resolve(P).mode == "segment"
    with pytest.raises(ValueError):
        SamplingPlan("sometimes")
    with pytest.raises(ValueError):
        map_chunks(FAIR, 10, RngStream(0), lambda c: 0, SamplingPlan())


@pytest.mark.parametrize("mode", ["independent", "segment"])
def test_workers_do_not_change_results(mode):
    P = symbol_partition(2)
    fn = lambda c: c.windows(P, -2, 3)[0].tobytes()
    one = map_chunks(FAIR, 20_000, RngStream(5), fn, SamplingPlan(mode, workers=1))
    eight = map_chunks(FAIR, 20_000, RngStream(5), fn, SamplingPlan(mode, workers=8))
    assert one == eight


def test_segment_times_sorted_in_span():
    seen = []
    map_chunks(FAIR, 5000, RngStream(1), lambda c: seen.append(c.times), SamplingPlan("segment"))
    for t in seen:
        assert np.all(np.diff(t) >= 0)
        assert t[0] >= 0 and t[-1] < 97 * len(t)
        assert abs(np.diff(t).mean() - 97) < 10
