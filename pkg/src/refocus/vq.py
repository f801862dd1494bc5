"""Patch-level k-means vector quantization for the structure and alias paths."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import atomic_write_bytes
from .kernels import nearest_centroid

# full-scale reference codebook sizes; the defaults here are far smaller
REFERENCE_STRUCTURE_SIZE = 8192
REFERENCE_ALIAS_SIZE = 512


@dataclass
class Codebook:
    centroids: np.ndarray
    role: str = "structure"
    seed: int = 0
    iters: int = 0
    trace: list = field(default_factory=list, repr=False)
    degenerate: bool = False  # more codes requested than distinct vectors

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def header(self) -> dict:
        return {"dim": self.dim, "size": self.size, "role": self.role,
                "seed": self.seed, "iters": self.iters}


@dataclass
class TokenGrid:
    indices: np.ndarray  # (gh, gw) int
    role: str = "structure"

    @property
    def gh(self) -> int:
        return self.indices.shape[0]

    @property
    def gw(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class DualVQConfig:
    patch: int = 4
    structure_size: int = 256
    alias_size: int = 32
    iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.patch < 1 or self.structure_size < 1 or self.alias_size < 1:
            raise ValueError("patch and codebook sizes must be >= 1")


def patchify(grid, patch: int) -> np.ndarray:
    """Non-overlapping ``patch x patch`` blocks, row-major, as rows of a matrix."""
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    if h % patch or w % patch:
        raise ValueError(f"grid {w}x{h} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    return g.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3).reshape(gh * gw, patch * patch)


def unpatchify(vectors, gh: int, gw: int, patch: int) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    return v.reshape(gh, gw, patch, patch).transpose(0, 2, 1, 3).reshape(gh * patch, gw * patch)


def kmeans_pp_init(vectors: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((vectors - vectors[chosen[0]]) ** 2, axis=1)
    for _ in range(1, size):
        total = d2.sum()
        if total > 0:
            j = int(rng.choice(n, p=d2 / total))
        else:
            j = int(rng.integers(n))
        chosen.append(j)
        d2 = np.minimum(d2, np.sum((vectors - vectors[j]) ** 2, axis=1))
    return vectors[chosen].copy()


def lloyd(vectors: np.ndarray, init: np.ndarray, iters: int):
    """Lloyd iterations from ``init``; returns (centroids, objective trace).

    ``trace[t]`` is the mean squared distance after the assignment step of
    iteration ``t`` (including empty-cluster repair); a final entry is
    appended for the returned centroids.
    """
    C = init.copy()
    n = vectors.shape[0]
    k = C.shape[0]
    trace = []
    for _ in range(iters):
        idx, dist = nearest_centroid(vectors, C)
        counts = np.bincount(idx, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed on the point currently worst served
            far = int(np.argmax(dist))
            if dist[far] == 0:
                break
            C[j] = vectors[far]
            counts[idx[far]] -= 1
            idx[far] = j
            dist[far] = 0.0
            counts[j] = 1
        trace.append(float(dist.mean()))
        sums = np.zeros_like(C)
        np.add.at(sums, idx, vectors)
        filled = counts > 0
        C[filled] = sums[filled] / counts[filled, None]
    _, dist = nearest_centroid(vectors, C)
    trace.append(float(dist.mean()))
    return C, trace


def train_codebook(vectors, size: int, iters: int = 20, seed: int = 0,
                   role: str = "structure") -> Codebook:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError("need at least one training vector")
    if size < 1:
        raise ValueError("codebook size must be >= 1")
    distinct = np.unique(vectors, axis=0).shape[0]
    degenerate = size > distinct
    if degenerate:
        warnings.warn(f"{role} codebook: {size} codes for {distinct} distinct vectors; "
                      "duplicate centroids will be produced", stacklevel=2)
    rng = np.random.default_rng(seed)
    init = kmeans_pp_init(vectors, size, rng)
    C, trace = lloyd(vectors, init, iters)
    return Codebook(centroids=C, role=role, seed=seed, iters=iters, trace=trace,
                    degenerate=degenerate)


def quantize(cb: Codebook, vectors):
    """Nearest-centroid codes (ties to the lowest index) and their reconstruction."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != cb.dim:
        raise ValueError(f"vector dim {vectors.shape[-1]} does not match codebook dim {cb.dim}")
    idx, _ = nearest_centroid(vectors, cb.centroids)
    return idx, cb.centroids[idx]


def tokenize_grid(cb: Codebook, grid, patch: int) -> tuple:
    """Quantize a 2D grid patch-wise; returns (TokenGrid, reconstructed grid)."""
    g = np.asarray(grid, dtype=np.float64)
    gh, gw = g.shape[0] // patch, g.shape[1] // patch
    idx, rec = quantize(cb, patchify(g, patch))
    return TokenGrid(idx.reshape(gh, gw), role=cb.role), unpatchify(rec, gh, gw, patch)


def codebook_stats(grid, cb: Codebook | None = None) -> dict:
    idx = np.asarray(grid.indices if isinstance(grid, TokenGrid) else grid).ravel()
    size = cb.size if cb is not None else int(idx.max()) + 1
    hist = np.bincount(idx, minlength=size)
    p = hist[hist > 0] / hist.sum()
    entropy = float(-np.sum(p * np.log(p)))
    return {"histogram": hist.tolist(), "entropy": entropy,
            "perplexity": math.exp(entropy), "used": int(np.count_nonzero(hist))}


# ---------------------------------------------------------------------------
# serialization


def save_codebook(cb: Codebook, stem) -> None:
    """Write ``<stem>.csv`` (one centroid per row) and ``<stem>.json`` header."""
    stem = Path(stem)
    rows = [",".join(repr(float(v)) for v in c) for c in cb.centroids]
    atomic_write_bytes(stem.with_suffix(".csv"), ("\n".join(rows) + "\n").encode())
    atomic_write_bytes(stem.with_suffix(".json"),
                       (json.dumps(cb.header(), indent=2, sort_keys=True) + "\n").encode())


def load_codebook(stem) -> Codebook:
    stem = Path(stem)
    hdr = json.loads(stem.with_suffix(".json").read_text())
    C = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", ndmin=2)
    if C.shape != (hdr["size"], hdr["dim"]):
        raise ValueError(f"codebook CSV shape {C.shape} disagrees with header")
    return Codebook(centroids=C, role=hdr["role"], seed=hdr["seed"], iters=hdr["iters"])


def save_token_grid(tg: TokenGrid, path) -> None:
    rows = [",".join(str(int(v)) for v in row) for row in tg.indices]
    atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())
