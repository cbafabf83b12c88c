import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gosgd.errors import ConfigError, DimensionError, DivergenceError, DomainError
from gosgd.numeric_core import (
    RandomSource,
    as_vector,
    axpy,
    bernoulli,
    convex_combine,
    l2_distance,
    uniform_peer,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def vec(*v):
    return as_vector(v)


@pytest.mark.parametrize("a, x, y, expected", [
    (0.0, [1, 2], [3, 4], [3, 4]),
    (1.0, [1, 1], [0, 0], [1, 1]),
    (-0.01, [100, 0], [1, 1], [0, 1]),
])
def test_axpy_examples(a, x, y, expected):
    np.testing.assert_array_equal(axpy(a, vec(*x), vec(*y)), expected)


@pytest.mark.parametrize("w, x, y, expected", [
    (0.5, [0], [1], [0.5]),
    (1.0, [7], [9], [7]),
    (0.25, [4, 0], [0, 4], [1, 3]),
])
def test_convex_combine_examples(w, x, y, expected):
    np.testing.assert_array_equal(convex_combine(w, vec(*x), vec(*y)), expected)


@pytest.mark.parametrize("x, y, expected", [
    ([1, 2], [1, 2], 0.0),
    ([3, 0], [0, 4], 5.0),
    ([1], [0], 1.0),
])
def test_l2_distance_examples(x, y, expected):
    assert l2_distance(vec(*x), vec(*y)) == expected


def test_length_mismatch_raises():
    with pytest.raises(DimensionError):
        axpy(1.0, vec(1, 2), vec(1))
    with pytest.raises(DimensionError):
        convex_combine(0.5, vec(1, 2), vec(1))
    with pytest.raises(DimensionError):
        l2_distance(vec(1, 2), vec(1))


@pytest.mark.parametrize("w", [-0.1, 1.5, float("nan")])
def test_convex_weight_out_of_range(w):
    with pytest.raises(DomainError):
        convex_combine(w, vec(1), vec(2))


def test_non_finite_result_is_an_error():
    with pytest.raises(DivergenceError):
        axpy(1e308, vec(1e308), vec(0))
    with pytest.raises(DivergenceError):
        as_vector([1.0, np.nan])


def test_results_are_read_only():
    out = axpy(1.0, vec(1), vec(2))
    with pytest.raises(ValueError):
        out[0] = 3.0


@given(st.floats(0, 1), arrays(np.float64, st.integers(1, 20), elements=finite))
def test_convex_combine_fixed_point(w, x):
    x = as_vector(x)
    np.testing.assert_allclose(convex_combine(w, x, x), x, rtol=1e-15, atol=0)


@given(st.data())
def test_ops_preserve_length(data):
    n = data.draw(st.integers(1, 30))
    x = as_vector(data.draw(arrays(np.float64, n, elements=finite)))
    y = as_vector(data.draw(arrays(np.float64, n, elements=finite)))
    assert axpy(0.3, x, y).shape == (n,)
    assert convex_combine(0.3, x, y).shape == (n,)
    assert l2_distance(x, y) >= 0.0


def test_bernoulli_boundaries(rng):
    assert not any(bernoulli(rng, 0.0) for _ in range(1000))
    assert all(bernoulli(rng, 1.0) for _ in range(1000))


def test_bernoulli_rejects_bad_probability(rng):
    with pytest.raises(DomainError):
        bernoulli(rng, 1.1)
    with pytest.raises(DomainError):
        bernoulli(rng, -0.1)


def test_bernoulli_law_of_large_numbers():
    r = RandomSource(0, 0)
    mean = np.mean([bernoulli(r, 0.5) for _ in range(100_000)])
    assert 0.49 <= mean <= 0.51


def test_uniform_peer_two_workers(rng):
    assert all(uniform_peer(rng, 0, 2) == 1 for _ in range(100))


def test_uniform_peer_frequencies():
    r = RandomSource(0, 1)
    draws = np.array([uniform_peer(r, 3, 8) for _ in range(100_000)])
    assert not np.any(draws == 3)
    freq = np.bincount(draws, minlength=8) / len(draws)
    others = np.delete(freq, 3)
    assert np.all(np.abs(others - 1 / 7) <= 0.01)


def test_uniform_peer_needs_two_workers(rng):
    with pytest.raises(ConfigError):
        uniform_peer(rng, 0, 1)


def test_streams_are_reproducible_and_distinct():
    a = [RandomSource(5, 2).random() for _ in range(3)]
    assert len(set(a)) == 1
    r1, r2 = RandomSource(5, 2), RandomSource(5, 2)
    assert [r1.random() for _ in range(10)] == [r2.random() for _ in range(10)]
    assert RandomSource(5, 2).random() != RandomSource(5, 3).random()
    assert RandomSource(5, 2).child(0).random() != RandomSource(5, 2).child(1).random()
    assert RandomSource(5, 2).child(1).random() == RandomSource(5, 2).child(1).random()


@settings(max_examples=25)
@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_any_64bit_seed_and_stream(seed, stream):
    r = RandomSource(seed, stream)
    assert 0.0 <= r.random() < 1.0
