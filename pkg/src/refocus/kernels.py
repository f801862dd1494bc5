"""Hot inner loops, each in a numba-compiled and a vectorized numpy form.

The public names (:func:`correlate_valid`, :func:`fft_radix2`,
:func:`nearest_centroid`) dispatch to one backend chosen at import time by
:mod:`refocus._accel`. Both variants stay importable under ``*_numba`` /
``*_numpy`` so tests and benchmarks can cross-check them.

Summation order per output element is fixed and identical between the two
convolution and FFT variants.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# 2D direct correlation over a pre-padded image


def correlate_valid_numpy(padded: np.ndarray, weights: np.ndarray) -> np.ndarray:
    kh, kw = weights.shape
    h = padded.shape[0] - kh + 1
    w = padded.shape[1] - kw + 1
    out = np.zeros((h, w))
    for a in range(kh):
        for b in range(kw):
            out += weights[a, b] * padded[a:a + h, b:b + w]
    return out


def _correlate_valid_loops(padded, weights):
    kh, kw = weights.shape
    h = padded.shape[0] - kh + 1
    w = padded.shape[1] - kw + 1
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    acc += weights[a, b] * padded[i + a, j + b]
            out[i, j] = acc
    return out


correlate_valid_numba = njit(_correlate_valid_loops)

# ---------------------------------------------------------------------------
# Iterative radix-2 decimation-in-time FFT over the last axis of a 2D batch


def bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def twiddles(n: int) -> np.ndarray:
    k = np.arange(n // 2)
    angle = -2.0 * np.pi * k / n
    return np.cos(angle) + 1j * np.sin(angle)


def fft_radix2_numpy(x: np.ndarray, tw: np.ndarray, rev: np.ndarray) -> np.ndarray:
    batch, n = x.shape
    a = x[:, rev].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        w = tw[:: n // m][:half]
        blocks = a.reshape(batch, n // m, m)
        even = blocks[:, :, :half]
        t = w * blocks[:, :, half:]
        a = np.concatenate((even + t, even - t), axis=2).reshape(batch, n)
        m *= 2
    return a


def _fft_radix2_loops(x, tw, rev):
    batch, n = x.shape
    out = np.empty((batch, n), dtype=np.complex128)
    for r in range(batch):
        for i in range(n):
            out[r, i] = x[r, rev[i]]
        m = 2
        while m <= n:
            half = m // 2
            stride = n // m
            for start in range(0, n, m):
                for k in range(half):
                    t = tw[k * stride] * out[r, start + k + half]
                    e = out[r, start + k]
                    out[r, start + k] = e + t
                    out[r, start + k + half] = e - t
            m *= 2
    return out


fft_radix2_numba = njit(_fft_radix2_loops)

# ---------------------------------------------------------------------------
# Exhaustive nearest-centroid search (ties -> lowest index)


def nearest_centroid_numpy(vectors: np.ndarray, centroids: np.ndarray, chunk: int = 4096):
    n = vectors.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for s in range(0, n, chunk):
        diff = vectors[s:s + chunk, None, :] - centroids[None, :, :]
        d2 = np.einsum("nkd,nkd->nk", diff, diff)
        j = np.argmin(d2, axis=1)
        idx[s:s + chunk] = j
        dist[s:s + chunk] = d2[np.arange(len(j)), j]
    return idx, dist


def _nearest_centroid_loops(vectors, centroids):
    n, dim = vectors.shape
    k = centroids.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(k):
            acc = 0.0
            for d in range(dim):
                diff = vectors[i, d] - centroids[j, d]
                acc += diff * diff
            if acc < best:
                best = acc
                bj = j
        idx[i] = bj
        dist[i] = best
    return idx, dist


nearest_centroid_numba = njit(_nearest_centroid_loops)

# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    _correlate = correlate_valid_numba
    _fft = fft_radix2_numba
    _nearest = nearest_centroid_numba
else:
    _correlate = correlate_valid_numpy
    _fft = fft_radix2_numpy
    _nearest = nearest_centroid_numpy


def correlate_valid(padded: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """'valid' correlation of an already padded image with ``weights``."""
    return _correlate(np.ascontiguousarray(padded, dtype=np.float64),
                      np.ascontiguousarray(weights, dtype=np.float64))


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT along the last axis; length must be a power of two."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1) or n == 0:
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    flat = np.ascontiguousarray(x.reshape(-1, n))
    out = _fft(flat, twiddles(n), bit_reverse_indices(n))
    return out.reshape(x.shape)


def nearest_centroid(vectors: np.ndarray, centroids: np.ndarray):
    """Return (index, squared distance) of the nearest centroid per row."""
    return _nearest(np.ascontiguousarray(vectors, dtype=np.float64),
                    np.ascontiguousarray(centroids, dtype=np.float64))
