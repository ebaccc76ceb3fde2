"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``SMC_PURE_PYTHON=1`` before import to force the numpy path.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SMC_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def kde_logpdf(queries, support, bandwidth) -> np.ndarray:
    """Log density of a Gaussian KDE with per-dimension bandwidth.

    ``queries`` is (m, d), ``support`` is (n, d), ``bandwidth`` is (d,).
    """
    q = np.ascontiguousarray(queries, dtype=np.float64)
    s = np.ascontiguousarray(support, dtype=np.float64)
    h = np.ascontiguousarray(bandwidth, dtype=np.float64)
    if q.ndim != 2 or s.ndim != 2 or q.shape[1] != s.shape[1] or h.shape != (s.shape[1],):
        raise ValueError(
            f"shape mismatch: queries {q.shape}, support {s.shape}, bandwidth {h.shape}"
        )
    return np.asarray(_impl.kde_logpdf(q, s, h))


def pair_loss(z, coef) -> tuple[float, np.ndarray]:
    """Weighted sum of squared pairwise distances and its gradient w.r.t. ``z``."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    c = np.ascontiguousarray(coef, dtype=np.float64)
    if c.shape != (len(z), len(z)):
        raise ValueError(f"coefficient matrix {c.shape} does not match {len(z)} points")
    value, grad = _impl.pair_loss(z, c)
    return float(value), np.asarray(grad)
