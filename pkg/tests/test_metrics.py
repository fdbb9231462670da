import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inflaw import metrics

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_mse_examples():
    assert metrics.mse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert metrics.mse([0.0, 0.0], [1.0, 3.0]) == 5.0


def test_r_squared_examples():
    assert metrics.r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    # predicting the mean gives exactly zero
    assert metrics.r_squared([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == 0.0
    assert metrics.r_squared([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == -3.0


def test_r_squared_constant_actuals():
    with pytest.raises(ValueError, match="undefined"):
        metrics.r_squared([2.0, 2.0], [1.0, 3.0])


def test_relative_errors():
    assert metrics.relative_errors([2.0, 4.0], [1.0, 5.0]) == [0.5, 0.25]
    with pytest.raises(ValueError, match="zero actual"):
        metrics.relative_errors([0.0], [1.0])


@pytest.mark.parametrize("fn", [metrics.mse, metrics.r_squared, metrics.relative_errors, metrics.spearman])
def test_length_mismatch(fn):
    with pytest.raises(ValueError, match="length mismatch"):
        fn([1.0, 2.0, 3.0], [1.0, 2.0])


def test_average_ranks_ties():
    np.testing.assert_array_equal(metrics.average_ranks([10, 20, 20, 5]), [2.0, 3.5, 3.5, 1.0])
    np.testing.assert_array_equal(metrics.average_ranks([1, 1, 1]), [2.0, 2.0, 2.0])


def test_spearman_examples():
    assert metrics.spearman([1, 2, 3], [10, 20, 30]) == 1.0
    assert metrics.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    # textbook tied example: ranks (1.5, 1.5, 3) vs (1, 2, 3)
    assert metrics.spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(math.sqrt(3) / 2, abs=1e-15)


def test_spearman_undefined_for_constant_input():
    with pytest.raises(ValueError):
        metrics.spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        metrics.spearman([1], [1])


@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30))
def test_spearman_bounded_and_symmetric(pairs):
    a, b = zip(*pairs)
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    rho = metrics.spearman(a, b)
    assert -1.0 <= rho <= 1.0
    assert rho == pytest.approx(metrics.spearman(b, a), abs=1e-15)


@given(st.lists(finite, min_size=1, max_size=30), st.lists(finite, min_size=1, max_size=30))
def test_mse_nonnegative_and_order_free(a, b):
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    value = metrics.mse(a, b)
    assert value >= 0
    # correctly rounded sums do not depend on order
    assert metrics.mse(a[::-1], b[::-1]) == value
