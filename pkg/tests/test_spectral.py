import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from refocus.imagecore import PatternSpec, gen_pattern
from refocus.psf import disk_kernel, gaussian_kernel
from refocus.spectral import (alias_energy_identity, alias_energy_identity_2d, alias_spectrum,
                              corrupted_dft, dft, dft2, fold_map, folded_energy_metric, idft,
                              idft2, ideal_lowpass, ideal_lowpass2, naive_dft, parseval_error,
                              passband_preservation_check, passband_preservation_check_2d,
                              report_json, run_verification_suite, verify_decimation_identity,
                              verify_decimation_identity_2d, wiener_gain)

from conftest import sum_dft


def np_lowpass(x, cutoff):
    """Independent ideal lowpass on numpy's FFT: keep |omega| < cutoff * pi."""
    n = len(x)
    freqs = np.fft.fftfreq(n)  # cycles/sample, in [-0.5, 0.5)
    keep = np.abs(freqs) * 2 < cutoff - 1e-12
    if cutoff >= 1:
        keep[:] = True
    X = np.fft.fft(x)
    X[~keep] = 0
    return np.fft.ifft(X).real


def tone(n, f):
    """cos(omega n) with omega = f * pi."""
    return np.cos(np.pi * f * np.arange(n))


def test_dft_examples():
    np.testing.assert_allclose(dft([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(dft([1, -1, 1, -1]), [0, 0, 4, 0], atol=1e-12)


@pytest.mark.parametrize("n", [8, 12, 5, 32])
def test_dft_oracles(n, rng):
    x = rng.standard_normal(n)
    np.testing.assert_allclose(dft(x), sum_dft(x), atol=1e-10, rtol=0)
    np.testing.assert_allclose(naive_dft(x), sum_dft(x), atol=1e-10, rtol=0)
    np.testing.assert_allclose(dft(x), np.fft.fft(x), atol=1e-10, rtol=0)
    np.testing.assert_allclose(idft(dft(x)).real, x, atol=1e-12)


def test_dft2(rng):
    img = rng.standard_normal((8, 16))
    np.testing.assert_allclose(dft2(img), np.fft.fft2(img), atol=1e-10)
    np.testing.assert_allclose(idft2(dft2(img)).real, img, atol=1e-12)


def test_decimation_identity_examples(rng):
    assert verify_decimation_identity(np.full(16, 0.7)) <= 1e-12
    assert verify_decimation_identity(rng.standard_normal(16)) <= 1e-9
    with pytest.raises(ValueError):
        verify_decimation_identity(np.ones(7))


@given(arrays(np.float64, st.sampled_from([2, 4, 6, 10, 16, 24]), elements=st.floats(-10, 10)))
def test_decimation_identity_property(x):
    assert verify_decimation_identity(x) <= 1e-9 * max(1.0, float(np.abs(x).sum()))


def test_lowpass_examples():
    np.testing.assert_allclose(ideal_lowpass(np.full(16, 0.3), 0.5), 0.3, atol=1e-12)
    nyq = np.array([1.0, -1.0] * 8)
    np.testing.assert_allclose(ideal_lowpass(nyq, 0.5), 0.0, atol=1e-12)
    n = 40  # both tones land on exact bins (2 and 8)
    lo, hi = tone(n, 0.1), tone(n, 0.4)
    np.testing.assert_allclose(ideal_lowpass(lo + hi, 0.5), lo + hi, atol=1e-9)
    np.testing.assert_allclose(ideal_lowpass(lo + hi, 0.3), lo, atol=1e-9)


@pytest.mark.parametrize("cutoff", [0.25, 0.5, 0.3, 1.0])
def test_lowpass_against_numpy(cutoff, rng):
    x = rng.standard_normal(32)
    np.testing.assert_allclose(ideal_lowpass(x, cutoff), np_lowpass(x, cutoff), atol=1e-10)


def test_lowpass2_separable(rng):
    img = rng.standard_normal((8, 8))
    rows = np.array([np_lowpass(r, 0.5) for r in img])
    ref = np.array([np_lowpass(c, 0.5) for c in rows.T]).T
    np.testing.assert_allclose(ideal_lowpass2(img, 0.5), ref, atol=1e-10)


def test_fold_map():
    replicas, base = fold_map(8, 2)
    assert replicas.tolist() == [[0, 4], [1, 5], [2, 6], [3, 7]]
    # decimated bins 0, 1, -1 have baseband sources 0, 1, 7; bin 2 is the new Nyquist
    assert base.tolist() == [0, 1, -1, 7]


def test_alias_spectrum_examples(rng):
    n = 32
    X = np.fft.fft(rng.standard_normal(n))
    keep = np.abs(np.fft.fftfreq(n)) < 0.25 - 1e-12
    X[~keep] = 0
    band = np.fft.ifft(X).real
    np.testing.assert_allclose(alias_spectrum(band, 2), 0, atol=1e-10)
    a = 0.7
    nyq = a * np.array([1.0, -1.0] * 8)
    A = alias_spectrum(nyq, 2)
    assert A[0] == pytest.approx(a * 16 / 2, abs=1e-9)
    np.testing.assert_allclose(A[1:], 0, atol=1e-9)


def test_alias_spectrum_matches_decimation_error(rng):
    # definition check: DFT(D) - DFT(lowpassed D) equals the alias spectrum
    x = rng.standard_normal(24)
    for s in (2, 3, 4):
        D = x[::s]
        L = np_lowpass(x, 1.0 / s)[::s]
        np.testing.assert_allclose(alias_spectrum(x, s), np.fft.fft(D) - np.fft.fft(L), atol=1e-10)


def test_energy_identity_examples(rng):
    lhs, rhs = alias_energy_identity(ideal_lowpass(rng.standard_normal(32), 0.5))
    assert lhs <= 1e-18 and rhs <= 1e-18
    for a, n in [(1.0, 16), (0.3, 64), (2.5, 128)]:
        lhs, rhs = alias_energy_identity(a * np.array([1.0, -1.0] * (n // 2)))
        assert abs(lhs - 0.25 * (a * n) ** 2) <= 1e-9 * max(1, (a * n) ** 2)
        assert abs(rhs - 0.25 * (a * n) ** 2) <= 1e-9 * max(1, (a * n) ** 2)
    x = rng.standard_normal(32)
    lhs, rhs = alias_energy_identity(x)
    assert abs(lhs - rhs) <= 1e-6 * max(1, rhs)
    L, D = np_lowpass(x, 0.5)[::2], x[::2]
    assert lhs == pytest.approx(np.sum(np.abs(np.fft.fft(L) - np.fft.fft(D)) ** 2), rel=1e-10)


def test_energy_identity_other_factors(rng):
    for s in (3, 4):
        lhs, rhs = alias_energy_identity(rng.standard_normal(48), s)
        assert abs(lhs - rhs) <= 1e-8 * max(1, rhs)


def test_passband_examples(rng):
    assert passband_preservation_check(np.full(16, 2.0)) <= 1e-12
    assert passband_preservation_check(tone(40, 0.2)) <= 1e-9
    assert passband_preservation_check(rng.standard_normal(64)) <= 1e-9


def test_parseval(rng):
    assert parseval_error(rng.standard_normal(50)) <= 1e-9
    x = rng.standard_normal((8, 8))
    assert parseval_error(x) <= 1e-9
    assert np.sum(x * x) == pytest.approx(np.sum(np.abs(np.fft.fft2(x)) ** 2) / 64, rel=1e-12)


def test_2d_identities(rng):
    img = rng.standard_normal((16, 8))
    assert verify_decimation_identity_2d(img) <= 1e-9
    lhs, rhs = alias_energy_identity_2d(img)
    assert abs(lhs - rhs) <= 1e-6 * max(1, rhs)
    assert passband_preservation_check_2d(img) <= 1e-9


def test_corrupted_transform_is_caught(rng):
    x = rng.standard_normal(16)
    assert verify_decimation_identity(x, corrupted_dft) > 1e-3


def test_wiener_gain():
    assert wiener_gain(2.0, 0.0) == 1.0
    assert wiener_gain(0.0, 5.0) == 0.0
    assert wiener_gain(3.0, 1.0) == 0.75
    assert wiener_gain(0.0, 0.0, with_flag=True) == (0.0, True)
    g = wiener_gain(np.linspace(0, 10, 50), 1.0)
    assert np.all(np.diff(g) > 0) and np.all((0 <= g) & (g <= 1))
    g = wiener_gain(1.0, np.linspace(0, 10, 50))
    assert np.all(np.diff(g) < 0)
    with pytest.raises(ValueError):
        wiener_gain(-1.0, 1.0)


def test_folded_energy_metric():
    band = ideal_lowpass2(np.random.default_rng(1).standard_normal((32, 32)), 0.5)
    assert folded_energy_metric(band, 2) <= 1e-9
    zp = gen_pattern(PatternSpec("zoneplate", 64))
    none = folded_energy_metric(zp, 2)
    disk = folded_energy_metric(zp, 2, disk_kernel(3))
    assert none > 0 and disk < none
    assert disk <= folded_energy_metric(zp, 2, gaussian_kernel(1.0))
    # golden values from the first oracle-checked run
    assert none == pytest.approx(102656, rel=1e-3)
    with pytest.raises(ValueError):
        folded_energy_metric(np.zeros((6, 6)), 4)


def test_suite_and_report():
    res = run_verification_suite(sizes=(8, 16), n_signals=20, image_sizes=(8,))
    assert all(r.passed for r in res)
    assert {(r.identity, r.size) for r in res} >= {("decimation_identity", "8"),
                                                  ("energy_conservation", "16")}
    text = report_json(res, seed=0)
    assert '"all_passed": true' in text
    bad = run_verification_suite(sizes=(8,), n_signals=5, image_sizes=(), corrupt=True)
    assert not all(r.passed for r in bad)
