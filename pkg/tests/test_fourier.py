import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorecdm.fourier import circular_convolve_direct, circular_convolve_fft, dft, fft, ifft

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def reference_dft(x):
    # independent scalar oracle built on cmath rather than numpy
    n = len(x)
    return [sum(x[j] * cmath.exp(-2j * cmath.pi * j * k / n) for j in range(n)) for k in range(n)]


def test_dft_impulse_and_constant():
    np.testing.assert_allclose(dft([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-12)
    c = 2.5
    np.testing.assert_allclose(dft([c] * 4), [4 * c, 0, 0, 0], atol=1e-12)


def test_dft_shifted_impulse():
    np.testing.assert_allclose(dft([0, 1, 0, 0]), [1, -1j, -1, 1j], atol=1e-12)


def test_dft_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=7) + 1j * rng.normal(size=7)
    np.testing.assert_allclose(dft(x), reference_dft(list(x)), atol=1e-12)


@pytest.mark.parametrize("fn", [dft, fft, ifft])
def test_empty_input_rejected(fn):
    with pytest.raises(ValueError):
        fn([])


@pytest.mark.parametrize("n", [1, 2, 3, 24, 31, 32, 33, 64, 100, 128, 257, 1024])
def test_fft_matches_dft(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    assert np.max(np.abs(fft(x) - dft(x))) <= 1e-9


def test_fft_batched_rows_match():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 5, 40))
    full = fft(x)
    for idx in np.ndindex(3, 5):
        np.testing.assert_allclose(full[idx], fft(x[idx]), atol=1e-12)


@pytest.mark.parametrize("n", [1, 5, 24, 64])
def test_fft_zero_input(n):
    assert np.all(fft(np.zeros(n)) == 0)


def test_real_even_input_has_real_spectrum():
    rng = np.random.default_rng(2)
    for n in (8, 24, 50):
        x = rng.normal(size=n)
        x = (x + np.roll(x[::-1], 1)) / 2  # x[j] == x[-j mod n]
        assert np.max(np.abs(fft(x).imag)) <= 1e-9


def test_ifft_examples():
    np.testing.assert_allclose(ifft(fft([5, -2, 7])), [5, -2, 7], atol=1e-12)
    n = 6
    np.testing.assert_allclose(ifft([n] + [0] * (n - 1)), np.ones(n), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    assert np.max(np.abs(ifft(fft(x)) - x)) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 150), st.integers(0, 2**32 - 1))
def test_parseval(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    lhs = np.sum(np.abs(x) ** 2)
    rhs = np.sum(np.abs(fft(x)) ** 2) / n
    assert abs(lhs - rhs) <= 1e-9 * lhs


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 150), finite, finite, st.integers(0, 2**32 - 1))
def test_linearity(n, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, n))
    lhs = fft(a * x + b * y)
    rhs = a * fft(x) + b * fft(y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, abs(a) + abs(b)) * n


def test_convolution_examples():
    np.testing.assert_allclose(circular_convolve_fft([1, 2, 3], [1, 0, 0]), [1, 2, 3], atol=1e-12)
    np.testing.assert_allclose(circular_convolve_fft([1] * 4, [1] * 4), [4] * 4, atol=1e-12)
    assert circular_convolve_direct([1, 0], [0, 1]) == [0, 1]
    assert circular_convolve_direct([1, 2], [3, 4]) == [11, 10]


def test_direct_delta_identity():
    x = [0.5, -1.0, 2.0, 3.25, 7.0]
    assert circular_convolve_direct([1, 0, 0, 0, 0], x) == x


@pytest.mark.parametrize("fn", [circular_convolve_fft, circular_convolve_direct])
def test_length_mismatch(fn):
    with pytest.raises(ValueError):
        fn([1, 2, 3], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 128), st.integers(0, 2**32 - 1))
def test_convolution_theorem_and_commutativity(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, n))
    fast = circular_convolve_fft(a, b)
    assert np.max(np.abs(fast - circular_convolve_direct(a, b))) <= 1e-9
    assert np.max(np.abs(fast - circular_convolve_fft(b, a))) <= 1e-9


def test_length_24_pairs_match_direct():
    rng = np.random.default_rng(24)
    for _ in range(50):
        a, b = rng.normal(size=(2, 24))
        assert np.max(np.abs(circular_convolve_fft(a, b) - circular_convolve_direct(a, b))) <= 1e-9
