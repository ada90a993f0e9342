"""LTEM, scalar LTEM and truncated EM solvers.

The batch iterators :func:`ltem_paths` and :func:`tem_paths` advance many
paths at once and are what the experiments use.  :func:`ltem_solve`,
:func:`ltem1d_solve` and :func:`tem_solve` wrap them for a single path and
return a :class:`Trajectory`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, ExponentOverflowError
from .transform import SAFE_EXPONENT, to_log
from .truncation import _project, truncated_log_coefficients

__all__ = [
    "Trajectory",
    "ltem_step",
    "ltem_paths",
    "tem_paths",
    "ltem_solve",
    "ltem1d_solve",
    "tem_solve",
]


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray  # (n_steps + 1, d)
    log_states: Optional[np.ndarray]  # None for the TEM baseline
    scheme: str
    failed_at: Optional[int] = None


def _apply_noise(diff, dB):
    acc = diff[:, :, 0] * dB[:, None, 0]
    for j in range(1, diff.shape[2]):
        acc = acc + diff[:, :, j] * dB[:, None, j]
    return acc


def _ltem_update(model, policy, z, dt, dB, radius):
    drift, diff = truncated_log_coefficients(model, policy, dt, z, radius)
    return z + drift * dt + _apply_noise(diff, dB)


def ltem_step(model, policy, z_k, dt, dB_k) -> np.ndarray:
    """One LTEM step ``z + drift_trunc(z) dt + diffusion_trunc(z) dB``."""
    z = np.asarray(z_k, dtype=float)[None, :]
    dB = np.asarray(dB_k, dtype=float).reshape(1, model.m)
    out = _ltem_update(model, policy, z, dt, dB, policy.radius(dt))[0]
    if not np.all(np.abs(out) <= SAFE_EXPONENT):
        raise ExponentOverflowError("LTEM step left the safe exponent range")
    return out


def ltem_paths(model, policy, z0, dt, increments):
    """Advance a batch of log-states; yields ``(k, z, failed_at)`` for k = 0..N.

    ``z0`` has shape ``(n, d)`` and ``increments`` shape ``(N, n, m)``.  A
    path whose update leaves ``|z_i| <= SAFE_EXPONENT`` is frozen at its last
    good value and ``failed_at`` records the offending step (``-1`` while
    healthy).  The yielded arrays are reused; copy them to keep them.
    """
    policy.check_dimension(model.d)
    radius = policy.radius(dt)
    z = np.array(z0, dtype=float)
    n = z.shape[0]
    failed_at = np.full(n, -1, dtype=np.int64)
    yield 0, z, failed_at
    for k in range(increments.shape[0]):
        new = _ltem_update(model, policy, z, dt, increments[k], radius)
        bad = ~np.all(np.abs(new) <= SAFE_EXPONENT, axis=1)
        dead = failed_at >= 0
        fresh = bad & ~dead
        if np.any(fresh):
            failed_at[fresh] = k + 1
        frozen = dead | fresh
        if np.any(frozen):
            new[frozen] = z[frozen]
        z = new
        yield k + 1, z, failed_at


def tem_paths(model, policy, y0, dt, increments):
    """Truncated EM on the original coordinates; yields ``(k, y, failed_at)``.

    The state is projected radially onto the ball of radius
    ``policy.radius(dt)`` before the coefficients are evaluated.  States may
    become non-positive.  Paths producing non-finite values are frozen and
    flagged; for models that cannot be evaluated off the positive cone a path
    is frozen at its first non-positive state (not counted as a failure).
    """
    radius = policy.radius(dt)
    y = np.array(y0, dtype=float)
    n = y.shape[0]
    failed_at = np.full(n, -1, dtype=np.int64)
    exited = np.zeros(n, dtype=bool)
    yield 0, y, failed_at
    for k in range(increments.shape[0]):
        yt, r = _project(y, radius)
        with np.errstate(all="ignore"):
            lam = model.drift(yt)
            sig = model.diffusion(yt)
            zero = r == 0
            if np.any(zero):
                lam[zero] = 0.0
                sig[zero] = 0.0
            new = y + lam * dt + _apply_noise(sig, increments[k])
        bad = ~np.all(np.isfinite(new), axis=1)
        stopped = (failed_at >= 0) | exited
        fresh = bad & ~stopped
        if np.any(fresh):
            failed_at[fresh] = k + 1
        frozen = stopped | fresh
        if np.any(frozen):
            new[frozen] = y[frozen]
        if not model.extends_to_real:
            exited |= np.any(new <= 0, axis=1)
        y = new
        yield k + 1, y, failed_at


def _grid(T, n_steps):
    if n_steps < 0:
        raise ConfigurationError("n_steps must be nonnegative")
    if n_steps == 0:
        return np.zeros(1), 0.0
    dt = T / n_steps
    return np.arange(n_steps + 1) * dt, dt


def _noise_steps(noise, m, n_steps):
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (m, n_steps):
        raise ConfigurationError(
            f"noise must have shape ({m}, {n_steps}), got {noise.shape}"
        )
    return noise.T[:, None, :]


def _solve_log(model, policy, y0, T, n_steps, noise, scheme):
    grid, dt = _grid(T, n_steps)
    z0 = to_log(np.asarray(y0, dtype=float).reshape(model.d))
    if n_steps == 0:
        z = z0[None, :]
        return Trajectory(grid, np.exp(z), z, scheme)
    inc = _noise_steps(noise, model.m, n_steps)
    zs = np.empty((n_steps + 1, model.d))
    for k, z, failed in ltem_paths(model, policy, z0[None, :], dt, inc):
        if failed[0] >= 0:
            raise ExponentOverflowError(
                f"{scheme} left the safe exponent range at step {failed[0]}",
                step=int(failed[0]),
            )
        zs[k] = z[0]
    return Trajectory(grid, np.exp(zs), zs, scheme)


def ltem_solve(model, policy, y0, T, n_steps, noise) -> Trajectory:
    """Solve on ``[0, T]`` with ``n_steps`` equal steps.

    ``noise`` holds the Brownian increments with shape ``(m, n_steps)``, as
    returned by :func:`ltem.brownian.coarsen`.
    """
    if policy.regime != "multi":
        raise ConfigurationError("ltem_solve expects a multi-regime policy")
    return _solve_log(model, policy, y0, T, n_steps, noise, "ltem")


def ltem1d_solve(model, policy, y0, T, n_steps, noise) -> Trajectory:
    """Scalar LTEM: same recursion under a scalar-regime policy."""
    if model.d != 1:
        raise ConfigurationError("ltem1d_solve needs a model with d = 1")
    if policy.regime != "scalar":
        raise ConfigurationError("ltem1d_solve expects a scalar-regime policy")
    return _solve_log(model, policy, y0, T, n_steps, noise, "ltem1d")


def tem_solve(model, y0, T, n_steps, noise, tem_policy) -> Trajectory:
    """Truncated EM baseline; states are not kept positive."""
    grid, dt = _grid(T, n_steps)
    y0 = np.asarray(y0, dtype=float).reshape(model.d)
    if not np.all(np.isfinite(y0)):
        raise DomainError("initial state must be finite")
    if n_steps == 0:
        return Trajectory(grid, y0[None, :].copy(), None, "tem")
    inc = _noise_steps(noise, model.m, n_steps)
    ys = np.empty((n_steps + 1, model.d))
    failed_at = None
    for k, y, failed in tem_paths(model, tem_policy, y0[None, :], dt, inc):
        ys[k] = y[0]
        if failed[0] >= 0 and failed_at is None:
            failed_at = int(failed[0])
    return Trajectory(grid, ys, None, "tem", failed_at)
