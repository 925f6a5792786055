import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clusterkit.metrics import MetricError, mse, relative_error, relative_error_histogram, smape


def test_identical():
    assert mse([1, 2, 3], [1, 2, 3]) == 0.0
    assert smape([1, 2, 3], [1, 2, 3]) == 0.0


def test_hand_example():
    assert mse([10, 20], [10, 10]) == pytest.approx(50.0, rel=1e-9)
    assert smape([10, 20], [10, 10]) == pytest.approx(100 / 3, rel=1e-9)


def test_relative_error_direction():
    assert relative_error(50, 100) == 0.5
    assert relative_error(200, 100) == 2.0


def test_guards():
    with pytest.raises(MetricError):
        relative_error(1, 0)
    with pytest.raises(MetricError):
        mse([1], [1, 2])
    with pytest.raises(MetricError):
        smape([], [])


def test_both_zero_counts_nothing():
    assert smape([0, 10], [0, 10]) == 0.0
    assert smape([0], [5]) == 200.0


def test_histogram_conserves_count():
    rng = np.random.default_rng(0)
    m, e = rng.uniform(1, 100, 500), rng.uniform(1, 100, 500)
    buckets = relative_error_histogram(m, e)
    assert sum(c for *_, c in buckets) == 500


finite = st.floats(-1e12, 1e12, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=50))
def test_smape_bounds(pairs):
    t, p = zip(*pairs)
    assert 0.0 <= smape(t, p) <= 200.0 + 1e-9
