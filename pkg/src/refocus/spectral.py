"""DFT machinery and executable checks of the 2:1 (and s:1) aliasing decomposition.

Conventions: unnormalized forward transform ``X[m] = sum_n x[n] exp(-2j pi m n / N)``.
Bin ``m`` corresponds to ``omega = 2 pi m / N``; the signed representative of
``m`` is ``m`` for ``m < N/2`` and ``m - N`` otherwise (the bin at exactly
``N/2`` counts as ``-N/2``).

The ideal lowpass keeps bins with ``|omega| < cutoff * pi`` strictly, so the
bin sitting exactly on the cutoff is removed. For decimation by ``s`` the
baseband of decimated bin ``m`` is the single original bin congruent to it
with ``|signed| < N / (2 s)``; the decimated Nyquist bin has no baseband
member and is pure alias.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .kernels import fft_radix2
from .pyramid import convolve, decimate

REPORT_SCHEMA = "refocus.verify/1"


# ---------------------------------------------------------------------------
# transforms


def naive_dft(x) -> np.ndarray:
    """O(N^2) DFT over the last axis by the defining sum."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    idx = np.arange(n)
    phase = (np.outer(idx, idx) % n) * (-2.0 * np.pi / n)
    W = np.cos(phase) + 1j * np.sin(phase)
    return x @ W


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def dft(x) -> np.ndarray:
    """Forward DFT over the last axis (radix-2 when possible, else the direct sum)."""
    x = np.asarray(x)
    if x.shape[-1] < 1:
        raise ValueError("DFT of an empty sequence")
    if _is_pow2(x.shape[-1]):
        return fft_radix2(x)
    return naive_dft(x)


def idft(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    return np.conj(dft(np.conj(X))) / X.shape[-1]


def dft2(img, transform=dft) -> np.ndarray:
    rows = transform(np.asarray(img))
    return np.swapaxes(transform(np.swapaxes(rows, -1, -2)), -1, -2)


def idft2(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    return np.conj(dft2(np.conj(X))) / (X.shape[-1] * X.shape[-2])


def corrupted_dft(x) -> np.ndarray:
    """Negative control: a DFT with the sign of bin 1 flipped."""
    X = dft(x)
    if X.shape[-1] > 1:
        X[..., 1] *= -1
    return X


# ---------------------------------------------------------------------------
# bin bookkeeping


def signed_bins(n: int) -> np.ndarray:
    m = np.arange(n)
    return np.where(2 * m < n, m, m - n)


def lowpass_mask(n: int, cutoff: float) -> np.ndarray:
    if not 0.0 < cutoff <= 1.0:
        raise ValueError(f"cutoff fraction must lie in (0, 1], got {cutoff}")
    if cutoff == 1.0:
        return np.ones(n, dtype=bool)
    return 2 * np.abs(signed_bins(n)) < cutoff * n - 1e-9


def fold_map(n: int, s: int):
    """Replica table for decimation of a length-``n`` axis by ``s``.

    Returns ``(replicas, base)``: ``replicas[m]`` lists the ``s`` original bins
    that land on decimated bin ``m``; ``base[m]`` is the baseband one, or -1 for
    the decimated Nyquist bin.
    """
    if n % s:
        raise ValueError(f"length {n} not divisible by {s}")
    M = n // s
    m = np.arange(M)
    replicas = (m[:, None] + M * np.arange(s)[None, :]) % n
    ms = signed_bins(M)
    base = np.where(2 * np.abs(ms) < M, ms % n, -1)
    return replicas, base


# ---------------------------------------------------------------------------
# 1D identities


def _require_even(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) % 2:
        raise ValueError(f"need an even-length 1D signal, got shape {x.shape}")
    return x


def _decimate1(x, s):
    if len(x) % s:
        raise ValueError(f"length {len(x)} not divisible by {s}")
    return x[::s]


def ideal_lowpass(x, cutoff_fraction: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    X = dft(x)
    X[..., ~lowpass_mask(x.shape[-1], cutoff_fraction)] = 0.0
    return idft(X).real


def ideal_lowpass2(img, cutoff_fraction: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    X = dft2(img)
    keep = lowpass_mask(h, cutoff_fraction)[:, None] & lowpass_mask(w, cutoff_fraction)[None, :]
    X[~keep] = 0.0
    return idft2(X).real


def verify_decimation_identity(x, transform=dft) -> float:
    """max |DFT(x[::2])[m] - (X[m] + X[m + N/2]) / 2| over m < N/2."""
    x = _require_even(x)
    n = len(x)
    X = transform(x)
    lhs = transform(x[::2])
    rhs = 0.5 * (X[: n // 2] + X[n // 2:])
    return float(np.max(np.abs(lhs - rhs)))


def alias_spectrum(x, s: int, transform=dft) -> np.ndarray:
    """Folded content per decimated bin, scaled by the 1/s decimation gain."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    replicas, base = fold_map(n, s)
    X = transform(x)
    total = X[replicas].sum(axis=1)
    folded = total - np.where(base >= 0, X[np.maximum(base, 0)], 0.0)
    return folded / s


def alias_energy_identity(x, s: int = 2, transform=dft):
    """(lhs, rhs) with lhs = ||DFT(L decimated) - DFT(D)||^2 via the lowpass path
    and rhs = (1/s^2) sum |folded|^2 via direct bin arithmetic."""
    x = _require_even(x) if s == 2 else np.asarray(x, dtype=np.float64)
    L = _decimate1(ideal_lowpass(x, 1.0 / s), s)
    D = _decimate1(x, s)
    lhs = float(np.sum(np.abs(transform(L) - transform(D)) ** 2))
    replicas, base = fold_map(len(x), s)
    X = transform(x)
    folded = X[replicas].sum(axis=1) - np.where(base >= 0, X[np.maximum(base, 0)], 0.0)
    rhs = float(np.sum(np.abs(folded) ** 2)) / (s * s)
    return lhs, rhs


def passband_preservation_check(x, transform=dft) -> float:
    """max |DFT(lowpass(x) decimated)[m] - X[m] / 2| over baseband bins."""
    x = _require_even(x)
    L = ideal_lowpass(x, 0.5)[::2]
    _, base = fold_map(len(x), 2)
    ok = base >= 0
    dev = transform(L)[ok] - 0.5 * transform(x)[base[ok]]
    return float(np.max(np.abs(dev))) if dev.size else 0.0


def parseval_error(x, transform=dft) -> float:
    x = np.asarray(x, dtype=np.float64)
    X = transform(x) if x.ndim == 1 else dft2(x)
    return float(abs(np.sum(x * x) - np.sum(np.abs(X) ** 2) / x.size))


# ---------------------------------------------------------------------------
# 2D identities (separable, per axis)


def _require_even2(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] % 2 or img.shape[1] % 2:
        raise ValueError(f"need an even-sized image, got shape {img.shape}")
    return img


def verify_decimation_identity_2d(img, transform=dft) -> float:
    img = _require_even2(img)
    h, w = img.shape
    X = dft2(img, transform)
    lhs = dft2(img[::2, ::2], transform)
    rhs = 0.25 * (X[: h // 2, : w // 2] + X[h // 2:, : w // 2]
                  + X[: h // 2, w // 2:] + X[h // 2:, w // 2:])
    return float(np.max(np.abs(lhs - rhs)))


def _folded_2d(X, s):
    h, w = X.shape
    rr, rb = fold_map(h, s)
    cr, cb = fold_map(w, s)
    total = X[rr[:, :, None, None], cr[None, None, :, :]].sum(axis=(1, 3))
    both = (rb[:, None] >= 0) & (cb[None, :] >= 0)
    base = X[np.maximum(rb, 0)[:, None], np.maximum(cb, 0)[None, :]]
    return total - np.where(both, base, 0.0), both, base


def alias_energy_identity_2d(img, s: int = 2, transform=dft):
    img = np.asarray(img, dtype=np.float64)
    L = decimate(ideal_lowpass2(img, 1.0 / s), s)
    D = decimate(img, s)
    lhs = float(np.sum(np.abs(dft2(L, transform) - dft2(D, transform)) ** 2))
    folded, _, _ = _folded_2d(dft2(img, transform), s)
    rhs = float(np.sum(np.abs(folded) ** 2)) / s ** 4
    return lhs, rhs


def passband_preservation_check_2d(img, transform=dft) -> float:
    img = _require_even2(img)
    L = decimate(ideal_lowpass2(img, 0.5), 2)
    _, both, base = _folded_2d(dft2(img, transform), 2)
    dev = dft2(L, transform)[both] - 0.25 * base[both]
    return float(np.max(np.abs(dev))) if dev.size else 0.0


# ---------------------------------------------------------------------------


def wiener_gain(S_xx, S_nn, with_flag: bool = False):
    """MSE-optimal gain S_xx / (S_xx + S_nn); 0 where both spectra vanish.

    With ``with_flag`` returns ``(gain, degenerate)`` where ``degenerate`` marks
    the 0/0 points.
    """
    sxx = np.asarray(S_xx, dtype=np.float64)
    snn = np.asarray(S_nn, dtype=np.float64)
    if np.any(sxx < 0) or np.any(snn < 0):
        raise ValueError("power spectral densities must be >= 0")
    denom = sxx + snn
    degenerate = denom == 0
    gain = np.divide(sxx, denom, out=np.zeros(np.broadcast(sxx, snn).shape), where=~degenerate)
    if gain.ndim == 0:
        gain, degenerate = float(gain), bool(degenerate)
    return (gain, degenerate) if with_flag else gain


def folded_energy_metric(img, s: int, prefilter: np.ndarray | None = None,
                         boundary: str = "reflect") -> float:
    """Spectral energy of naive decimation minus the ideal-lowpass reference.

    The optional ``prefilter`` kernel is applied first; both the decimated
    signal and the reference are taken from the prefiltered image.
    """
    y = np.asarray(img, dtype=np.float64)
    h, w = y.shape
    if h % s or w % s:
        raise ValueError(f"image {w}x{h} is not divisible by {s}")
    if prefilter is not None:
        y = convolve(y, prefilter, boundary)
    D = decimate(y, s)
    R = decimate(ideal_lowpass2(y, 1.0 / s), s)
    return float(np.sum(np.abs(dft2(D - R)) ** 2))


# ---------------------------------------------------------------------------
# verification suite


@dataclass
class CheckResult:
    identity: str
    size: str
    max_error: float
    tolerance: float
    passed: bool


def run_verification_suite(sizes=(8, 16, 32, 64, 128), seed: int = 0, n_signals: int = 200,
                           image_sizes=(8, 16), corrupt: bool = False) -> list:
    """Run the spectral identity suite on seeded random signals and images."""
    rng = np.random.default_rng(seed)
    tf = corrupted_dft if corrupt else dft
    results = []
    for n in sizes:
        sig = rng.standard_normal((n_signals, n))
        dec = max(verify_decimation_identity(x, tf) for x in sig)
        results.append(CheckResult("decimation_identity", str(n), dec, 1e-9, dec <= 1e-9))
        rel = 0.0
        for x in sig:
            lhs, rhs = alias_energy_identity(x, 2, tf)
            rel = max(rel, abs(lhs - rhs) / max(1.0, rhs))
        results.append(CheckResult("energy_conservation", str(n), rel, 1e-6, rel <= 1e-6))
        pb = max(passband_preservation_check(x, tf) for x in sig)
        results.append(CheckResult("passband_preservation", str(n), pb, 1e-9, pb <= 1e-9))
        par = max(parseval_error(x, tf) / max(1.0, float(np.sum(x * x))) for x in sig)
        results.append(CheckResult("parseval", str(n), par, 1e-9, par <= 1e-9))
    for n in image_sizes:
        imgs = rng.standard_normal((max(1, n_signals // 10), n, n))
        dec = max(verify_decimation_identity_2d(im, tf) for im in imgs)
        results.append(CheckResult("decimation_identity_2d", f"{n}x{n}", dec, 1e-9, dec <= 1e-9))
        rel = 0.0
        for im in imgs:
            lhs, rhs = alias_energy_identity_2d(im, 2, tf)
            rel = max(rel, abs(lhs - rhs) / max(1.0, rhs))
        results.append(CheckResult("energy_conservation_2d", f"{n}x{n}", rel, 1e-6, rel <= 1e-6))
        pb = max(passband_preservation_check_2d(im, tf) for im in imgs)
        results.append(CheckResult("passband_preservation_2d", f"{n}x{n}", pb, 1e-9, pb <= 1e-9))
    return results


def report_json(results, **meta) -> str:
    body = {"schema": REPORT_SCHEMA, **meta,
            "all_passed": all(r.passed for r in results),
            "checks": [asdict(r) for r in results]}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def spectrum_csv(X) -> str:
    lines = ["bin,real,imag,magnitude"]
    for m, v in enumerate(np.asarray(X).ravel()):
        lines.append(f"{m},{v.real!r},{v.imag!r},{abs(v)!r}")
    return "\n".join(lines) + "\n"
