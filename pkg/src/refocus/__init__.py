"""Alias-free multi-scale machinery: defocus pyramids, spectral aliasing checks,
dual-path VQ, alias-gate cross-attention and teacher-student distillation."""

__version__ = "0.1.0"
