"""Defocus point-spread kernels and the focus-radius schedule."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _normalize(w: np.ndarray) -> np.ndarray:
    w = w / w.sum()
    # symmetrize away any rounding asymmetry from the division
    w = 0.5 * (w + w.T)
    w = 0.5 * (w + w[::-1, :])
    w = 0.5 * (w + w[:, ::-1])
    return w / w.sum()


def disk_kernel(rho: float, supersample: int = 8) -> np.ndarray:
    """Uniform disc PSF of radius ``rho`` with area-coverage weights.

    Each pixel cell is sampled on a ``supersample x supersample`` sub-grid and
    weighted by the fraction of sub-samples falling inside the disc.
    ``rho == 0`` is the 1x1 identity.
    """
    if rho < 0:
        raise ValueError(f"disk radius must be >= 0, got {rho}")
    if supersample < 1:
        raise ValueError("supersample must be a positive integer")
    if rho == 0:
        return np.ones((1, 1))
    r = max(0, math.ceil(rho - 0.5))
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    centers = np.arange(-r, r + 1, dtype=np.float64)
    # sub-sample coordinates along one axis: (cell, sub)
    coords = centers[:, None] + offs[None, :]
    c2 = coords * coords
    inside = (c2[:, None, :, None] + c2[None, :, None, :]) <= rho * rho
    w = inside.sum(axis=(2, 3)).astype(np.float64)
    if w.sum() == 0:  # disc smaller than one sub-sample spacing
        return np.ones((1, 1))
    return _normalize(w)


def gaussian_kernel(sigma: float, truncate: float = 3.0) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"gaussian sigma must be > 0, got {sigma}")
    r = math.ceil(truncate * sigma)
    i = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma * sigma))
    return _normalize(g)


def make_kernel(kind: str, radius: float, supersample: int = 8, truncate: float = 3.0) -> np.ndarray:
    """Kernel for a focus radius; for ``gaussian`` the radius is used as sigma.

    Radius 0 gives the identity for both kinds.
    """
    if kind == "disk":
        return disk_kernel(radius, supersample)
    if kind == "gaussian":
        return np.ones((1, 1)) if radius == 0 else gaussian_kernel(radius, truncate)
    raise ValueError(f"unknown kernel kind {kind!r}")


def check_kernel(w: np.ndarray, tol: float = 1e-12) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 != 1:
        raise ValueError(f"kernel must be odd square, got {w.shape}")
    if np.any(w < 0):
        raise ValueError("kernel has negative weights")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"kernel sums to {w.sum()!r}, not 1")


def save_kernel_csv(w: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in w:
            writer.writerow([repr(float(v)) for v in row])


def load_kernel_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows)


@dataclass(frozen=True)
class FocusSchedule:
    K: int
    rho_max: float
    radii: tuple


def focus_schedule(K: int, rho_max: float) -> FocusSchedule:
    """Cosine blur-to-clarity radii, ``radii[0] == rho_max`` and ``radii[-1] == 0``."""
    if K < 2:
        raise ValueError(f"focus schedule needs K >= 2, got {K}")
    if rho_max < 0:
        raise ValueError(f"rho_max must be >= 0, got {rho_max}")
    radii = []
    for k in range(1, K + 1):
        r = rho_max * (1.0 - math.cos(math.pi * (K - k) / (K - 1))) / 2.0
        # snap cos() rounding noise so exact profile values (e.g. 9.0) come out exact
        radii.append(round(r, 12))
    radii[0] = float(rho_max)
    radii[-1] = 0.0
    if K % 2 == 1:
        radii[K // 2] = rho_max / 2.0
    # rounding in cos can break ties the wrong way for large K
    for k in range(1, K):
        radii[k] = min(radii[k], radii[k - 1])
    return FocusSchedule(K=K, rho_max=float(rho_max), radii=tuple(radii))
