"""Discrete/fast Fourier transforms and circular convolution.

All transforms act on the last axis and broadcast over leading axes. Short
sequences (n <= 32) use a cached DFT matrix; longer powers of two run
radix-2 Cooley-Tukey stages on top of that base block; every other length
goes through Bluestein's chirp-z reduction onto a power-of-two transform,
so circular semantics hold for any n without zero-padding the signal.

Convention: no scaling on the forward transform, ``1/n`` on the inverse.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "dft",
    "fft",
    "ifft",
    "circular_convolve_fft",
    "circular_convolve_direct",
]

_IMAG_TOL = 1e-9
# lengths up to this use a direct DFT; also the radix-2 base block
_BASE = 32
# batched transforms run in row blocks of about this many bytes so each
# block's butterfly stages stay cache resident
_CHUNK_BYTES = 1 << 18


def _as_complex(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise ValueError("Fourier transforms need a non-empty sequence")
    return arr


def _is_pow2(n: int) -> bool:
    return n & (n - 1) == 0


@lru_cache(maxsize=64)
def _dft_matrix(n: int) -> np.ndarray:
    j = np.arange(n)
    # (j*k) mod n keeps the phase argument exact before conversion
    return np.exp(-2j * np.pi * (np.outer(j, j) % n) / n)


@lru_cache(maxsize=64)
def _stage_factor(rows: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(rows) / rows)[:, None]


def _radix2(a: np.ndarray) -> np.ndarray:
    """Power-of-two FFT: direct DFT on blocks of at most ``_BASE`` points,
    then radix-2 butterflies doubling the transform size each stage."""
    n = a.shape[-1]
    lead = a.shape[:-1]
    base = min(n, _BASE)
    # column c of the (base, n/base) view holds the decimated sequence x[c::n/base]
    blocks = a.reshape(lead + (base, n // base))
    X = _dft_matrix(base) @ blocks
    while X.shape[-2] < n:
        half = X.shape[-1] // 2
        even, odd = X[..., :half], X[..., half:] * _stage_factor(X.shape[-2])
        X = np.concatenate([even + odd, even - odd], axis=-2)
    return X.reshape(lead + (n,))


@lru_cache(maxsize=64)
def _bluestein_plan(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase small for large k
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    if n > 1:
        b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    return chirp, _radix2(b), m


def _bluestein(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    chirp, b_hat, m = _bluestein_plan(n)
    padded = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    padded[..., :n] = a * chirp
    conv = _radix2(padded) * b_hat
    # inverse power-of-two transform through conjugation
    conv = np.conj(_radix2(np.conj(conv))) / m
    return conv[..., :n] * chirp


def dft(x) -> np.ndarray:
    """Direct O(n^2) summation ``X[k] = sum_j x[j] exp(-2 pi i j k / n)``.

    Deliberately a plain loop: it is the reference the fast paths are
    checked against.
    """
    a = _as_complex(x)
    n = a.shape[-1]
    out = np.zeros_like(a)
    for k in range(n):
        acc = np.zeros(a.shape[:-1], dtype=np.complex128)
        for j in range(n):
            phase = 2.0 * np.pi * ((j * k) % n) / n
            acc = acc + a[..., j] * complex(np.cos(phase), -np.sin(phase))
        out[..., k] = acc
    return out


def _fft_block(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n <= _BASE:
        return a @ _dft_matrix(n)
    return _radix2(a) if _is_pow2(n) else _bluestein(a)


def _ifft_block(a: np.ndarray) -> np.ndarray:
    out = np.conj(_fft_block(np.conj(a)))
    out /= a.shape[-1]
    return out


def _by_rows(transform, a: np.ndarray) -> np.ndarray:
    """Apply ``transform`` to row blocks small enough to stay in cache."""
    n = a.shape[-1]
    rows = a.reshape(-1, n)
    step = max(1, _CHUNK_BYTES // (16 * n))
    if rows.shape[0] <= step:
        return transform(a)
    out = np.empty_like(rows)
    for i in range(0, rows.shape[0], step):
        out[i:i + step] = transform(rows[i:i + step])
    return out.reshape(a.shape)


def fft(x) -> np.ndarray:
    return _by_rows(_fft_block, _as_complex(x))


def ifft(X) -> np.ndarray:
    return _by_rows(_ifft_block, _as_complex(X))


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"circular convolution needs equal lengths, got {np.shape(a)} and {np.shape(b)}"
        )
    if a.shape[-1] == 0:
        raise ValueError("circular convolution of empty sequences")
    return a, b


def circular_convolve_fft(a, b) -> np.ndarray:
    """Circular convolution along the last axis via the convolution theorem.

    ``c[i] = sum_j a[j] b[(i - j) mod n]``. Leading axes broadcast.
    """
    a, b = _check_pair(a, b)
    scale = float(np.max(np.abs(a), initial=0.0)) * float(np.max(np.abs(b), initial=0.0))
    return real_part(ifft(fft(a) * fft(b)), scale * a.shape[-1])


def real_part(c: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Real part of a transform known to be real; fails if the imaginary
    residue exceeds ``1e-9`` relative to ``max(1, scale)``."""
    resid = float(np.max(np.abs(c.imag), initial=0.0))
    if resid > _IMAG_TOL * max(1.0, scale):
        raise FloatingPointError(f"imaginary residue {resid:.3e} after real convolution")
    return c.real.copy()


def circular_convolve_direct(a, b) -> list[float]:
    """Literal double-sum circular convolution of two 1-D sequences."""
    a, b = _check_pair(a, b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("direct circular convolution takes 1-D sequences")
    n = len(a)
    out = []
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += float(a[j]) * float(b[(i - j) % n])
        out.append(acc)
    return out
