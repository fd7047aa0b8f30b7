"""Numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` function for function and are used whenever the
compiled extension is unavailable (or ``MERGEFORGE_BACKEND=python``).
"""
from __future__ import annotations

import numpy as np

BF16_QNAN = 0x7FC0


def dot_norms(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """Return ``(a.b, a.a, b.b)`` for two flat float64 arrays."""
    return float(np.dot(a, b)), float(np.dot(a, a)), float(np.dot(b, b))


def axpby(a: np.ndarray, b: np.ndarray, ca: float, cb: float) -> np.ndarray:
    """Return ``ca * a + cb * b`` as a new float64 array."""
    out = np.multiply(a, ca)
    out += np.multiply(b, cb)
    return out


def f32_to_bf16_bits(x: np.ndarray) -> np.ndarray:
    bits = np.ascontiguousarray(x, dtype=np.float32).view(np.uint32)
    nan = (bits & 0x7FFFFFFF) > 0x7F800000
    rounded = (bits + (0x7FFF + ((bits >> 16) & 1))) >> 16
    out = rounded.astype(np.uint16)
    out[nan] = BF16_QNAN
    return out


def f64_to_bf16_bits(x: np.ndarray) -> np.ndarray:
    # Round to odd into float32 first so the second rounding step is exact RNE.
    x = np.ascontiguousarray(x, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        f = x.astype(np.float32)
        back = f.astype(np.float64)
    nan = np.isnan(x)
    inexact = (back != x) & ~nan
    away = inexact & (np.abs(back) > np.abs(x))
    if away.any():
        f[away] = np.nextafter(f[away], np.float32(0))
    bits = f.view(np.uint32) | inexact.astype(np.uint32)
    out = f32_to_bf16_bits(bits.view(np.float32))
    out[nan] = BF16_QNAN
    return out
