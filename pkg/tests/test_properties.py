import pytest
from hypothesis import given, settings, strategies as st

from ergolab import properties as props
from ergolab.rng import RngStream


@pytest.mark.parametrize("name", sorted(props.SUITES))
@settings(max_examples=3, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_suite_holds(name, seed):
    assert props.SUITES[name](RngStream(seed), 4096)


def test_random_probs_valid():
    import numpy as np
    g = np.random.default_rng(0)
    for k in (2, 3, 5):
        p = props.random_probs(g, k)
        assert abs(sum(p) - 1) < 1e-12 and min(p) >= 0.05 - 1e-6
