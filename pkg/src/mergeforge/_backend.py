"""Kernel backend selection.

The compiled extension is used when importable. Set ``MERGEFORGE_BACKEND``
to ``python`` to force the numpy fallback or ``compiled`` to fail loudly when
the extension is missing.
"""
from __future__ import annotations

import os

from . import _pykernels

_choice = os.environ.get("MERGEFORGE_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _pykernels

BACKEND = "compiled" if kernels is not _pykernels else "python"

dot_norms = kernels.dot_norms
axpby = kernels.axpby
f32_to_bf16_bits = kernels.f32_to_bf16_bits
f64_to_bf16_bits = kernels.f64_to_bf16_bits

__all__ = ["BACKEND", "axpby", "dot_norms", "f32_to_bf16_bits", "f64_to_bf16_bits"]
