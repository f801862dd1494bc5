"""Dual-path refocusing pyramid.

For each focus state k the pyramid holds the focused view ``L`` (blurred with
the radius-``rho_k`` PSF, then decimated, plus optional noise), the naive
decimated view ``D`` and the alias residual ``A = D - L_noiseless``.
Scales are ordered coarse/blurred (k=1) to fine/sharp (k=K).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import as_image, atomic_write_bytes, load_image, save_image
from .kernels import correlate_valid
from .psf import FocusSchedule, make_kernel

MANIFEST_SCHEMA = "refocus.pyramid/1"


def pad_image(img: np.ndarray, r: int, boundary: str = "reflect") -> np.ndarray:
    if r == 0:
        return img
    if boundary == "zero":
        return np.pad(img, r, mode="constant")
    if boundary != "reflect":
        raise ValueError(f"unknown boundary {boundary!r}")
    if min(img.shape) == 1:
        # mirror without edge repeat is undefined for a single sample
        out = img
        for axis, n in enumerate(img.shape):
            widths = [(0, 0), (0, 0)]
            widths[axis] = (r, r)
            out = np.pad(out, widths, mode="edge" if n == 1 else "reflect")
        return out
    # numpy reflects repeatedly when r exceeds the image size
    return np.pad(img, r, mode="reflect")


def convolve(img, kernel: np.ndarray, boundary: str = "reflect") -> np.ndarray:
    """Direct spatial convolution, output the same size as ``img``."""
    img = np.asarray(img, dtype=np.float64)
    r = kernel.shape[0] // 2
    if kernel.shape == (1, 1):
        return img * kernel[0, 0] if kernel[0, 0] != 1.0 else img.copy()
    return correlate_valid(pad_image(img, r, boundary), kernel[::-1, ::-1])


def decimate(img, s: int) -> np.ndarray:
    """Keep every ``s``-th sample along both axes. No prefilter."""
    img = np.asarray(img, dtype=np.float64)
    if int(s) != s or s < 1:
        raise ValueError(f"decimation factor must be a positive integer, got {s}")
    s = int(s)
    h, w = img.shape
    if h % s or w % s:
        raise ValueError(f"image {w}x{h} is not divisible by decimation factor {s}")
    return img[::s, ::s].copy()


def beta_schedule(K: int, beta_lo: float, beta_hi: float) -> list:
    if K < 2:
        raise ValueError(f"beta schedule needs K >= 2, got {K}")
    if not 0 <= beta_lo <= beta_hi:
        raise ValueError("need 0 <= beta_lo <= beta_hi")
    return [beta_lo + (beta_hi - beta_lo) * k / (K - 1) for k in range(K)]


def dyadic_factors(K: int) -> list:
    return [2 ** (K - 1 - k) for k in range(K)]


def noise_rng(seed: int, k: int) -> np.random.Generator:
    """Counter-based (Philox) stream for scale index ``k``, independent of other scales."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))


@dataclass
class ScaleTriple:
    L: np.ndarray
    D: np.ndarray
    A: np.ndarray
    s: int
    rho: float
    beta: float
    noise_seed: int
    L_clean: np.ndarray = field(repr=False, default=None)


@dataclass
class FocusPyramid:
    scales: list
    schedule: FocusSchedule
    factors: list
    betas: list
    kernel_kind: str = "disk"
    seed: int = 0
    boundary: str = "reflect"

    def manifest(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "K": self.schedule.K,
            "rho_max": self.schedule.rho_max,
            "radii": list(self.schedule.radii),
            "factors": list(self.factors),
            "betas": list(self.betas),
            "kernel": self.kernel_kind,
            "boundary": self.boundary,
            "seed": self.seed,
            "shapes": [list(t.L.shape) for t in self.scales],
        }


def build_pyramid(x, schedule: FocusSchedule, factors=None, beta=None,
                  kernel_kind: str = "disk", seed: int = 0,
                  boundary: str = "reflect", supersample: int = 8) -> FocusPyramid:
    x = as_image(x)
    K = schedule.K
    factors = dyadic_factors(K) if factors is None else [int(s) for s in factors]
    beta = [0.0] * K if beta is None else [float(b) for b in beta]
    if len(factors) != K or len(beta) != K:
        raise ValueError("factors and beta must have one entry per focus state")
    if any(b < 0 for b in beta):
        raise ValueError("noise amplitudes must be >= 0")
    scales = []
    for k, (rho, s, b) in enumerate(zip(schedule.radii, factors, beta)):
        D = decimate(x, s)
        blurred = convolve(x, make_kernel(kernel_kind, rho, supersample), boundary)
        L_clean = decimate(blurred, s)
        A = D - L_clean
        if b > 0:
            L = L_clean + b * noise_rng(seed, k).standard_normal(L_clean.shape)
        else:
            L = L_clean
        scales.append(ScaleTriple(L=L, D=D, A=A, s=s, rho=rho, beta=b,
                                  noise_seed=seed, L_clean=L_clean))
    return FocusPyramid(scales=scales, schedule=schedule, factors=factors, betas=beta,
                        kernel_kind=kernel_kind, seed=seed, boundary=boundary)


def alias_energy(triple) -> float:
    """Spatial L2^2 of the alias residual."""
    A = triple.A if hasattr(triple, "A") else np.asarray(triple)
    return float(np.sum(A * A))


# ---------------------------------------------------------------------------
# directory dump


def write_grid_csv(grid: np.ndarray, path) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(grid)]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def dump_pyramid(pyr: FocusPyramid, outdir, extra: dict | None = None) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for k, t in enumerate(pyr.scales, start=1):
        save_image(t.L, outdir / f"L_{k}.pgm")
        save_image(t.D, outdir / f"D_{k}.pgm")
        write_grid_csv(t.A, outdir / f"A_{k}.csv")
    manifest = pyr.manifest()
    if extra:
        manifest.update(extra)
    atomic_write_bytes(outdir / "manifest.json",
                       (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return outdir


def load_pyramid_dir(path) -> tuple:
    """Return (manifest, [(L, D, A), ...]) from a dumped pyramid directory."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    scales = []
    for k in range(1, manifest["K"] + 1):
        scales.append((load_image(path / f"L_{k}.pgm"), load_image(path / f"D_{k}.pgm"),
                       read_grid_csv(path / f"A_{k}.csv")))
    return manifest, scales
