"""Dense linear-algebra and stable-probability kernels.

Everything here operates on 64-bit row-major numpy arrays and is pure:
no hidden state, safe to call concurrently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# Jitter ladder for SPD repair: start, multiplier, cap.
JITTER_START = 1e-6
JITTER_FACTOR = 10.0
JITTER_MAX = 1e-2


def as_matrix(data, name="matrix"):
    """Validate and return a 2-D float64 array with all-finite entries."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries on construction")
    return a


def matmul(a, b):
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions differ ({a.shape[0]}x{a.shape[1]} @ "
            f"{b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor of an SPD matrix plus its log-determinant."""

    L: np.ndarray
    log_det: float
    jitter_used: float


def cholesky(m, jitter=0.0):
    """Factor m + jitter*I, escalating jitter x10 up to JITTER_MAX on failure.

    The escalation starts at JITTER_START when the requested jitter is below
    it.  Raises NumericalError carrying the last attempted jitter when the
    matrix is not positive definite even at the cap.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"cholesky: expected square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-8 * max(1.0, np.abs(m).max())):
        raise ValueError("cholesky: matrix is not symmetric")

    p = m.shape[0]
    eye = np.eye(p)
    attempt = jitter
    while True:
        try:
            L = np.linalg.cholesky(m + attempt * eye)
        except np.linalg.LinAlgError:
            if attempt >= JITTER_MAX:
                raise NumericalError(
                    f"cholesky: matrix not positive definite even with "
                    f"jitter {attempt:g}"
                )
            attempt = JITTER_START if attempt < JITTER_START else attempt * JITTER_FACTOR
            attempt = min(attempt, JITTER_MAX)
            continue
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        return CholeskyFactor(L=L, log_det=log_det, jitter_used=attempt)


def softmax(p):
    """Stable softmax over the last axis (max-subtraction)."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValueError("softmax: empty input")
    if not np.all(np.isfinite(p)):
        raise ValueError("softmax: non-finite entries")
    shifted = p - np.max(p, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_sum_exp(v):
    """log(sum(exp(v))) over the last axis, computed stably.

    Entries equal to -inf are tolerated (they contribute zero mass); this is
    what the mixture energy needs for zero-weight components.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp: empty input")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise ValueError("log_sum_exp: non-finite entries")
    m = np.max(v, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf row -> returns -inf cleanly
    out = np.squeeze(m, axis=-1) + np.log(np.sum(np.exp(v - m), axis=-1))
    return float(out) if out.ndim == 0 else out
