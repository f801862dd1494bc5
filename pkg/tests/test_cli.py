import json
import subprocess
import sys

import numpy as np
import pytest

from refocus.cli import main
from refocus.imagecore import load_image, save_image
from refocus.pyramid import load_pyramid_dir


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def zp(tmp_path):
    p = tmp_path / "zp.pgm"
    assert run("gen", "--kind", "zoneplate", "--size", 64, "-o", p) == 0
    return p


def test_gen(tmp_path, zp):
    assert load_image(zp).shape == (64, 64)
    assert run("gen", "--kind", "zoneplate", "--size", 64, "--alpha", 0.02, "-o", tmp_path / "a.pgm") == 0
    assert load_image(tmp_path / "a.pgm").shape == (64, 64)
    p = tmp_path / "s.png"
    assert run("gen", "--kind", "sinusoid", "--freq", 0.45, "--angle", 30, "-o", p) == 0
    first = p.read_bytes()
    assert run("gen", "--kind", "sinusoid", "--freq", 0.45, "--angle", 30, "-o", p) == 0
    assert p.read_bytes() == first


def test_gen_seed_env(tmp_path, monkeypatch):
    monkeypatch.setenv("REFOCUS_SEED", "4")
    run("gen", "--kind", "whitenoise", "--size", 8, "-o", tmp_path / "a.pgm")
    run("gen", "--kind", "whitenoise", "--size", 8, "--seed", 4, "-o", tmp_path / "b.pgm")
    run("gen", "--kind", "whitenoise", "--size", 8, "--seed", 5, "-o", tmp_path / "c.pgm")
    a, b, c = (load_image(tmp_path / f"{n}.pgm") for n in "abc")
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    monkeypatch.setenv("REFOCUS_SEED", "x")
    assert run("gen", "--kind", "whitenoise", "--size", 8, "-o", tmp_path / "d.pgm") == 1


def test_usage_errors(tmp_path, capsys):
    assert run("gen", "--kind", "sinusoid", "--freq", 0.9, "-o", tmp_path / "x.pgm") == 1
    with pytest.raises(SystemExit) as e:
        run("gen", "--kind", "nope", "-o", tmp_path / "x.pgm")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run()
    assert e.value.code == 1


def test_io_errors(tmp_path):
    assert run("pyramid", tmp_path / "missing.pgm", "-o", tmp_path / "out") == 3
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n4 4\n255\n\x00")
    assert run("compare", bad) == 3
    assert run("gen", "--kind", "impulse", "-o", tmp_path / "no" / "dir.pgm") == 3


def test_pyramid_defaults(tmp_path, zp):
    out = tmp_path / "pyr"
    assert run("pyramid", zp, "-o", out) == 0
    manifest, scales = load_pyramid_dir(out)
    assert [L.shape for L, _, _ in scales] == [(8, 8), (16, 16), (32, 32), (64, 64)]
    assert manifest["radii"] == [12.0, 9.0, 3.0, 0.0]
    assert manifest["factors"] == [8, 4, 2, 1]
    np.testing.assert_allclose(manifest["betas"], [1e-3, 4e-3, 7e-3, 1e-2], atol=1e-15)


def test_pyramid_no_blur_no_noise(tmp_path, zp):
    out = tmp_path / "pyr0"
    assert run("pyramid", zp, "-o", out, "--beta", 0, "--rho-max", 0) == 0
    _, scales = load_pyramid_dir(out)
    for L, D, A in scales:
        assert np.array_equal(L, D)
        assert np.all(A == 0)


def test_pyramid_crops_odd_input(tmp_path):
    p = tmp_path / "odd.pgm"
    save_image(np.random.default_rng(0).random((21, 19)), p)
    assert run("pyramid", p, "-o", tmp_path / "o", "--K", 3) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["crop"] == [20, 16]
    assert run("pyramid", p, "-o", tmp_path / "o2", "--factors", "8,4") == 1


def test_verify(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--sizes", "8,16,32", "--n-signals", 20, "--image-sizes", "8", "-o", out) == 0
    rep = json.loads(out.read_text())
    assert rep["all_passed"]
    keys = [(c["identity"], c["size"]) for c in rep["checks"]]
    assert len(keys) == len(set(keys))
    for ident in ("decimation_identity", "energy_conservation", "passband_preservation", "parseval"):
        assert {s for i, s in keys if i == ident} == {"8", "16", "32"}


def test_verify_corrupt(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--sizes", "8", "--n-signals", 5, "--self-test-corrupt", "-o", out) == 2
    assert not json.loads(out.read_text())["all_passed"]


def test_verify_multi_seed(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--sizes", "8", "--image-sizes", "", "--n-signals", 5,
               "--seeds", "1,2", "-o", out) == 0
    sizes = {c["size"] for c in json.loads(out.read_text())["checks"]}
    assert sizes == {"8@seed1", "8@seed2"}


def test_compare(tmp_path, zp):
    out = tmp_path / "c.json"
    assert run("compare", zp, "-o", out) == 0
    rep = json.loads(out.read_text())
    metrics = [e["metric"] for e in rep["results"]]
    assert metrics == sorted(metrics, reverse=True)
    by = {e["name"]: e for e in rep["results"]}
    assert by["none"]["ratio"] == 1.0
    for r in ("2", "3", "4"):
        assert by[f"disk_rho={r}"]["metric"] < rep["baseline"]


def test_compare_band_limited():
    from refocus.cli import compare_report
    from refocus.spectral import ideal_lowpass2

    img = ideal_lowpass2(np.random.default_rng(2).random((32, 32)), 0.5)
    rep = compare_report(img, 2, [0.5, 1, 2], [1, 2, 3, 4])
    energy = float(np.sum(np.abs(np.fft.fft2(img)) ** 2))
    assert rep["baseline"] <= 1e-9
    # spatial prefilters meet the mirrored border, which is not periodic,
    # so their residue is small relative to the signal but not exactly zero
    assert all(e["metric"] <= 1e-4 * energy for e in rep["results"])


def test_tokenize(tmp_path, zp):
    pyr = tmp_path / "pyr"
    run("pyramid", zp, "-o", pyr)
    out = tmp_path / "tok"
    assert run("tokenize", pyr, "-o", out, "--structure-size", 256, "--alias-size", 32) == 0
    rep = json.loads((out / "manifest.json").read_text())
    assert [s["k"] for s in rep["scales"]] == [1, 2, 3, 4]
    assert rep["alias"]["perplexity"] <= rep["structure"]["perplexity"]
    assert (out / "r_4.csv").exists() and (out / "a_4.csv").exists()
    assert (out / "codebook_structure.csv").exists()
    assert run("tokenize", pyr, "-o", out, "--patch", 3) == 1


def test_attn_demo(tmp_path):
    out = tmp_path / "a.json"
    blob = tmp_path / "p.bin"
    assert run("attn-demo", "--grad-check", "-o", out, "--params-out", blob) == 0
    rep = json.loads(out.read_text())
    assert rep["grad_check"]["overall"] <= 1e-4 and rep["grad_check"]["pass"]
    assert len(rep["grad_check"]["per_seed"]) == 5
    assert rep["teacher_equals_student_when_cross_value_zero"]
    assert blob.read_bytes().startswith(b"RFATTN1\n")


def test_distill_toy(tmp_path):
    assert run("distill-toy", "--steps", 0, "-o", tmp_path / "d") == 1
    assert run("distill-toy", "--steps", 30, "-o", tmp_path / "d") == 0
    rep = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert rep["decreased"] and not rep["diverged"]
    assert len((tmp_path / "d" / "trace.csv").read_text().splitlines()) == 31


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "refocus", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "refocus" in res.stdout
