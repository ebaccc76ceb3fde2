"""Numpy implementations of the inner loops (used when the extension is absent)."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
# bounds the (queries x support x dims) temporary at roughly 32 MB
_CHUNK_ELEMS = 4_000_000


def kde_logpdf(queries: np.ndarray, support: np.ndarray, bandwidth: np.ndarray) -> np.ndarray:
    """Log density of a diagonal-bandwidth Gaussian KDE at each query row."""
    n, d = support.shape
    norm = np.sum(np.log(bandwidth)) + d * _HALF_LOG_2PI + np.log(n)
    scaled_support = support / bandwidth
    scaled_q = queries / bandwidth
    step = max(1, _CHUNK_ELEMS // max(1, n * d))
    out = np.empty(len(queries))
    for start in range(0, len(queries), step):
        diff = scaled_q[start:start + step, None, :] - scaled_support[None, :, :]
        expo = -0.5 * np.einsum("qnd,qnd->qn", diff, diff)
        out[start:start + step] = logsumexp(expo, axis=1) - norm
    return out


def pair_loss(z: np.ndarray, coef: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient (w.r.t. ``z``) of sum_ij coef[i, j] * ||z_i - z_j||^2."""
    diff = z[:, None, :] - z[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    value = float(np.sum(coef * sq))
    sym = coef + coef.T
    grad = 2.0 * (sym.sum(axis=1)[:, None] * z - sym @ z)
    return value, grad
