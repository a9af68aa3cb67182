"""Kernel backend selection.

The numeric hot paths (residual evaluation, Jacobian values, the normal
matrix, and its gradient) exist twice: a compiled extension module and a
pure-numpy fallback with identical signatures.  The extension is chosen
when importable; ``CPLM_KERNELS`` overrides the choice.

    CPLM_KERNELS=          (unset or "auto") compiled if available
    CPLM_KERNELS=compiled  require the extension, raise if missing
    CPLM_KERNELS=python    force the pure-numpy fallback
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_choice = os.environ.get("CPLM_KERNELS", "auto").strip().lower()

if _choice in ("", "auto"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
elif _choice == "compiled":
    from . import _kernels as _impl

    BACKEND = "compiled"
elif _choice in ("python", "pure"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    raise ValueError(
        f"CPLM_KERNELS must be 'auto', 'compiled' or 'python', got {_choice!r}"
    )


def available_backends() -> dict[str, object]:
    """Importable kernel modules keyed by backend name, for benchmarks."""
    found: dict[str, object] = {"python": _kernels_py}
    try:
        from . import _kernels

        found["compiled"] = _kernels
    except ImportError:
        pass
    return found


def _c64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def cp_values(A, B, C):
    """Model values at every tensor position, flat in index order."""
    return _impl.cp_values(_c64(A), _c64(B), _c64(C))


def jacobian_values(A, B, C):
    """Structural nonzero values of the residual Jacobian, column by column."""
    return _impl.jacobian_values(_c64(A), _c64(B), _c64(C))


def gram_matrix(A, B, C):
    """Dense J^T J assembled from the factor Gram matrices."""
    return _impl.gram_matrix(_c64(A), _c64(B), _c64(C))


def jt_apply(A, B, C, f):
    """J^T f for a flat vector ``f`` of length I*J*K."""
    return _impl.jt_apply(_c64(A), _c64(B), _c64(C), _c64(f))


def apply_jacobian(A, B, C, dA, dB, dC):
    """J @ v where ``v`` packs the factor perturbations (dA, dB, dC)."""
    return _impl.apply_jacobian(
        _c64(A), _c64(B), _c64(C), _c64(dA), _c64(dB), _c64(dC)
    )
