import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from refocus.imagecore import (MissingFileError, PatternSpec, TruncatedStreamError,
                               UnsupportedFormatError, UnwritablePathError, gen_pattern,
                               load_image, save_image, to_bytes)


def write_pgm(path, w, h, data: bytes, maxval=255):
    path.write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + data)


def test_pgm_all_white(tmp_path):
    p = tmp_path / "w.pgm"
    write_pgm(p, 3, 2, bytes([255] * 6))
    img = load_image(p)
    assert img.shape == (2, 3)
    assert np.all(img == 1.0)


def test_pgm_all_black(tmp_path):
    p = tmp_path / "b.pgm"
    write_pgm(p, 2, 2, bytes(4))
    assert np.all(load_image(p) == 0.0)


def test_pgm_two_pixels(tmp_path):
    p = tmp_path / "t.pgm"
    write_pgm(p, 2, 1, bytes([51, 204]))
    img = load_image(p)
    assert img.tolist() == [[51 / 255, 204 / 255]]
    np.testing.assert_allclose(img, [[0.2, 0.8]], atol=1e-15)


def test_pgm_header_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([0, 255]))
    assert load_image(p).tolist() == [[0.0, 1.0]]


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(MissingFileError):
        load_image(tmp_path / "nope.pgm")
    p = tmp_path / "deep.pgm"
    write_pgm(p, 1, 1, bytes(2), maxval=65535)
    with pytest.raises(UnsupportedFormatError, match="bit depth"):
        load_image(p)
    p = tmp_path / "short.pgm"
    write_pgm(p, 4, 4, bytes(10))
    with pytest.raises(TruncatedStreamError):
        load_image(p)
    p = tmp_path / "junk.bin"
    p.write_bytes(b"GIF89a....")
    with pytest.raises(UnsupportedFormatError):
        load_image(p)


def test_png_16bit_rejected(tmp_path):
    p = tmp_path / "d.png"
    PILImage.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(p)
    with pytest.raises(UnsupportedFormatError):
        load_image(p)


def test_png_truncated(tmp_path):
    p = tmp_path / "t.png"
    save_image(np.random.default_rng(0).random((32, 32)), p)
    p.write_bytes(p.read_bytes()[:60])
    with pytest.raises((TruncatedStreamError, UnsupportedFormatError)):
        load_image(p)


def test_color_png_luma(tmp_path):
    p = tmp_path / "rgb.png"
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 20, 30]]], dtype=np.uint8)
    PILImage.fromarray(rgb, mode="RGB").save(p)
    img = load_image(p)
    expect = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255
    np.testing.assert_allclose(img, expect, atol=1e-12)


@pytest.mark.parametrize("value,byte", [(0.5, 128), (1.0, 255), (1.7, 255), (-0.3, 0),
                                        (0.0, 0), (127.5 / 255 - 1e-9, 127)])
def test_quantization(value, byte, tmp_path):
    assert to_bytes(np.full((1, 1), value))[0, 0] == byte
    p = tmp_path / "q.pgm"
    save_image(np.full((2, 2), value), p)
    assert p.read_bytes().endswith(bytes([byte] * 4))


def test_save_png_round_trip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    save_image(img, tmp_path / "r.png")
    assert np.max(np.abs(load_image(tmp_path / "r.png") - img)) <= 1 / 510


def test_unwritable(tmp_path):
    with pytest.raises(UnwritablePathError):
        save_image(np.zeros((2, 2)), tmp_path / "missing_dir" / "x.pgm")


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-0.5, 1.5)), st.sampled_from([".pgm", ".png"]))
def test_round_trip_bound(img, ext):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / ("img" + ext)
        save_image(img, p)
        back = load_image(p)
    assert np.max(np.abs(back - np.clip(img, 0, 1))) <= 1 / 510 + 1e-15


# --- patterns


def test_constant():
    assert np.all(gen_pattern(PatternSpec("constant", 4, level=0.3)) == 0.3)


def test_impulse():
    img = gen_pattern(PatternSpec("impulse", 3))
    assert img[1, 1] == 1.0 and img.sum() == 1.0


@pytest.mark.parametrize("n", [7, 8, 64])
def test_zoneplate_center_and_symmetry(n):
    img = gen_pattern(PatternSpec("zoneplate", n, alpha=0.1))
    c = n // 2
    assert img[c, c] == 1.0
    k = min(c, n - 1 - c)
    core = img[c - k:c + k + 1, c - k:c + k + 1]
    np.testing.assert_array_equal(core, core.T)
    np.testing.assert_array_equal(core, core[::-1])


def test_nyquist_sinusoid():
    img = gen_pattern(PatternSpec("sinusoid", 8, freq=0.5, angle=0))
    np.testing.assert_allclose(img, np.tile([1.0, 0.0] * 4, (8, 1)), atol=1e-12)


def test_sinusoid_formula():
    img = gen_pattern(PatternSpec("sinusoid", 5, freq=0.3, angle=30))
    y, x = 3, 2
    th = np.radians(30)
    assert img[y, x] == pytest.approx(0.5 + 0.5 * np.cos(2 * np.pi * 0.3 * (x * np.cos(th) + y * np.sin(th))))


def test_checker_and_noise_determinism():
    ck = gen_pattern(PatternSpec("checkerboard", 4, cell=2))
    assert ck.tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]]
    a = gen_pattern(PatternSpec("whitenoise", 16, seed=3))
    b = gen_pattern(PatternSpec("whitenoise", 16, seed=3))
    assert a.tobytes() == b.tobytes()
    assert 0 <= a.min() and a.max() <= 1


@pytest.mark.parametrize("spec", [PatternSpec("sinusoid", 8, freq=0.0),
                                  PatternSpec("sinusoid", 8, freq=0.6),
                                  PatternSpec("checkerboard", 8, cell=0),
                                  PatternSpec("bogus", 8),
                                  PatternSpec("constant", 0)])
def test_invalid_specs(spec):
    with pytest.raises(ValueError):
        gen_pattern(spec)
