"""Shared numerical helpers: error type, jittered Cholesky, normal CDF."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr


class NumericalError(RuntimeError):
    """A numerical routine failed beyond its recovery options (jitter, etc.)."""


def norm_cdf(x):
    """Standard normal CDF via scipy's ndtr (abs error well below 1e-9)."""
    return ndtr(x)


def chol_with_jitter(mat: np.ndarray, max_jitter_frac: float = 1e-6):
    """Cholesky factor of a symmetric PSD matrix with an escalating jitter ladder.

    Tries the plain factorization first, then adds ``f * trace(mat)`` to the
    diagonal for f = 1e-12, 1e-11, ..., up to ``max_jitter_frac``.

    Returns
    -------
    (L, jitter) : lower-triangular factor and the absolute jitter that was used.

    Raises
    ------
    NumericalError if the ladder is exhausted.
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = np.trace(mat)
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = 0.0
    frac = 1e-12
    while True:
        try:
            L = np.linalg.cholesky(mat + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            if frac > max_jitter_frac:
                raise NumericalError(
                    f"Cholesky failed after jitter ladder up to {max_jitter_frac:g}*trace"
                ) from None
            jitter = frac * scale
            frac *= 10.0
