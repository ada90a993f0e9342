"""Logarithmic change of variables z = ln y and the transformed coefficients."""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ExponentOverflowError

__all__ = [
    "SAFE_EXPONENT",
    "to_log",
    "to_positive",
    "log_coefficients",
    "log_drift",
    "log_diffusion",
]

# exp(700) is finite in double precision; ln(max double) is about 709.78.
SAFE_EXPONENT = 700.0


def to_log(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise DomainError(f"cannot take the log of non-positive state {y}")
    return np.log(y)


def to_positive(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError(f"log-state {z} is not finite")
    if np.any(np.abs(z) > SAFE_EXPONENT):
        raise ExponentOverflowError(
            f"log-state component exceeds the safe bound {SAFE_EXPONENT}"
        )
    return np.exp(z)


def log_coefficients(model, z):
    """Transformed drift and diffusion at a batch of log-states.

    ``z`` has shape ``(n, d)``.  Component-wise,

        drift_i = lambda_i(y) / y_i - 0.5 * sum_j sigma_ij(y)**2 / y_i**2
        diff_ij = sigma_ij(y) / y_i

    with ``y = exp(z)``.  No range checking is done here; callers go through
    :func:`to_positive` or the truncation layer.
    """
    y = np.exp(z)
    lam = model.drift(y)
    sig = model.diffusion(y)
    m = sig.shape[2]
    row_sq = sig[:, :, 0] * sig[:, :, 0]
    for j in range(1, m):
        row_sq = row_sq + sig[:, :, j] * sig[:, :, j]
    drift = lam / y - 0.5 * row_sq / (y * y)
    diff = sig / y[:, :, None]
    return drift, diff


def _single(model, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (model.d,):
        raise DomainError(f"expected a log-state of shape ({model.d},), got {z.shape}")
    to_positive(z)
    return z[None, :]


def log_drift(model, z) -> np.ndarray:
    return log_coefficients(model, _single(model, z))[0][0]


def log_diffusion(model, z) -> np.ndarray:
    return log_coefficients(model, _single(model, z))[1][0]
