"""Grayscale image I/O (PGM P5, 8-bit PNG) and synthetic aliasing test patterns.

Images are plain 2D ``float64`` arrays of shape ``(height, width)``, row-major,
nominally in [0, 1]. Values are only clamped when written to disk.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageError(Exception):
    """Base class for image loading / saving failures."""


class MissingFileError(ImageError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageError):
    """Not a PGM P5 / PNG file, or a bit depth other than 8."""


class TruncatedStreamError(ImageError):
    pass


class UnwritablePathError(ImageError, OSError):
    pass


LUMA = (0.299, 0.587, 0.114)


def as_image(data) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be a non-empty 2D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up to uint8."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM


def _pgm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise TruncatedStreamError("PGM header ended early")
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n:
        raise TruncatedStreamError("PGM header ended before raster data")
    return tokens, pos + 1


def _decode_pgm(buf: bytes) -> np.ndarray:
    (magic, w, h, maxval), offset = _pgm_tokens(buf, 4)
    if magic != b"P5":
        raise UnsupportedFormatError(f"PGM magic {magic!r} is not P5")
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise UnsupportedFormatError("malformed PGM header") from exc
    if maxv != 255:
        raise UnsupportedFormatError(f"unsupported PGM bit depth (maxval {maxv}, need 255)")
    if width < 1 or height < 1:
        raise UnsupportedFormatError("PGM has zero size")
    raster = buf[offset:offset + width * height]
    if len(raster) < width * height:
        raise TruncatedStreamError(
            f"PGM raster truncated: {len(raster)} of {width * height} bytes")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return data.astype(np.float64) / 255.0


def _encode_pgm(img: np.ndarray) -> bytes:
    b = to_bytes(img)
    h, w = b.shape
    return b"P5\n%d %d\n255\n" % (w, h) + b.tobytes()


# ---------------------------------------------------------------------------
# PNG (decoding delegated to Pillow)


def _decode_png(path: Path) -> np.ndarray:
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise UnsupportedFormatError(f"unsupported PNG bit depth (mode {mode})")
            if mode == "1":
                raise UnsupportedFormatError("unsupported PNG bit depth (1-bit)")
            im.load()
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        msg = str(exc).lower()
        if "truncated" in msg or "broken" in msg or "too short" in msg:
            raise TruncatedStreamError(f"PNG stream truncated: {exc}") from exc
        raise UnsupportedFormatError(f"cannot decode PNG: {exc}") from exc
    if arr.dtype != np.uint8:
        raise UnsupportedFormatError(f"unsupported PNG sample type {arr.dtype}")
    if mode in ("L", "LA"):
        gray = arr if arr.ndim == 2 else arr[..., 0]
        return gray.astype(np.float64) / 255.0
    rgb = arr[..., :3].astype(np.float64) / 255.0
    return LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1] + LUMA[2] * rgb[..., 2]


def _encode_png(img: np.ndarray) -> bytes:
    import io

    from PIL import Image as PILImage

    out = io.BytesIO()
    PILImage.fromarray(to_bytes(img), mode="L").save(out, format="PNG")
    return out.getvalue()


# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale (or color, reduced to luma) PNG or a binary PGM."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such image file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"\x89PNG"):
        return _decode_png(path)
    if head[:1] == b"P":
        return _decode_pgm(path.read_bytes())
    raise UnsupportedFormatError(f"{path}: neither PGM (P5) nor PNG")


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp.exists():
            tmp.unlink()
        raise UnwritablePathError(f"cannot write {path}: {exc}") from exc


def save_image(img, path) -> None:
    """Write ``img`` as PNG if the suffix is .png, else as PGM P5."""
    img = as_image(img)
    path = Path(path)
    payload = _encode_png(img) if path.suffix.lower() == ".png" else _encode_pgm(img)
    atomic_write_bytes(path, payload)


# ---------------------------------------------------------------------------
# Test patterns

PATTERN_KINDS = ("constant", "impulse", "sinusoid", "zoneplate", "checkerboard", "whitenoise")


@dataclass(frozen=True)
class PatternSpec:
    kind: str
    size: int
    level: float = 0.5
    freq: float = 0.25  # cycles/pixel
    angle: float = 0.0  # degrees
    alpha: float | None = None  # zone-plate chirp rate; None -> reaches Nyquist at the edge
    cell: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"size must be a positive integer, got {self.size}")
        if self.kind == "constant" and not 0.0 <= self.level <= 1.0:
            raise ValueError("constant level must lie in [0, 1]")
        if self.kind == "sinusoid" and not 0.0 < self.freq <= 0.5:
            raise ValueError(f"sinusoid frequency must lie in (0, 0.5], got {self.freq}")
        if self.kind == "zoneplate" and self.alpha is not None and self.alpha <= 0:
            raise ValueError("zone-plate chirp rate must be positive")
        if self.kind == "checkerboard" and (int(self.cell) != self.cell or self.cell < 1):
            raise ValueError("checker cell size must be an integer >= 1")


def default_zone_alpha(size: int) -> float:
    # local frequency alpha*r/pi reaches 0.5 cycles/px at r = size/2
    return math.pi / size


def gen_pattern(spec: PatternSpec) -> np.ndarray:
    spec.validate()
    n = int(spec.size)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    kind = spec.kind
    if kind == "constant":
        return np.full((n, n), float(spec.level))
    if kind == "impulse":
        img = np.zeros((n, n))
        img[n // 2, n // 2] = 1.0
        return img
    if kind == "sinusoid":
        th = math.radians(spec.angle)
        phase = 2.0 * math.pi * spec.freq * (xx * math.cos(th) + yy * math.sin(th))
        return 0.5 + 0.5 * np.cos(phase)
    if kind == "zoneplate":
        alpha = default_zone_alpha(n) if spec.alpha is None else spec.alpha
        c = n // 2
        xc, yc = xx - c, yy - c
        return 0.5 + 0.5 * np.cos(alpha * (xc * xc + yc * yc))
    if kind == "checkerboard":
        cell = int(spec.cell)
        return (((xx // cell) + (yy // cell)) % 2).astype(np.float64)
    # whitenoise
    return np.random.default_rng(spec.seed).random((n, n))
