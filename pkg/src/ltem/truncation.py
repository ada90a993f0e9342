"""Truncation policies and truncated transformed coefficients.

A policy bundles an increasing envelope ``psi`` (dominating the transformed
coefficients on balls), its inverse, and a decreasing step-size map ``eta``.
At step size ``dt`` the log-state is projected radially onto the ball of
radius ``psi_inv(eta(dt))`` before the coefficients are evaluated, which
caps them at ``eta(dt)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .transform import log_coefficients

__all__ = [
    "ExpEnvelope",
    "PowerEta",
    "TruncationPolicy",
    "StepConditionReport",
    "exponential_policy",
    "default_scalar_policy",
    "radial_truncate",
    "truncated_log_coefficients",
    "truncated_log_drift",
    "truncated_log_diffusion",
    "validate_step_condition",
    "get_policy",
    "POLICY_PATTERNS",
]

# Step sizes 2**0 ... 2**-40 used to check properties "for all dt in (0, 1]".
_DT_GRID = 2.0 ** -np.linspace(0, 40, 161)


@dataclass(frozen=True)
class ExpEnvelope:
    """psi(v) = scale * exp(rate * v) and its closed-form inverse."""

    scale: float
    rate: float = 1.0

    def psi(self, v):
        return self.scale * np.exp(self.rate * np.asarray(v, dtype=float))

    def psi_inv(self, r):
        return np.log(np.asarray(r, dtype=float) / self.scale) / self.rate


@dataclass(frozen=True)
class PowerEta:
    """eta(dt) = scale * dt**(-eps)."""

    scale: float
    eps: float

    def __call__(self, dt):
        return self.scale * np.asarray(dt, dtype=float) ** (-self.eps)


@dataclass(frozen=True)
class TruncationPolicy:
    psi: Callable
    psi_inv: Callable
    eta: Callable
    bound_const: float
    regime: str = "multi"
    growth_params: Optional[tuple] = None
    name: str = "custom"

    def __post_init__(self):
        if self.regime not in ("multi", "scalar"):
            raise ConfigurationError(f"unknown regime {self.regime!r}")

    @property
    def psi0(self) -> float:
        return float(self.psi(0.0))

    def radius(self, dt) -> float:
        """Truncation radius psi_inv(eta(dt)); raises when it is undefined."""
        e = float(self.eta(dt))
        if e < self.psi0:
            raise ConfigurationError(
                f"eta({dt:g}) = {e:g} is below psi(0) = {self.psi0:g}; "
                "the truncation radius is undefined at this step size"
            )
        return float(self.psi_inv(e))

    def bound_ok(self, dt) -> bool:
        """dt**0.5 * eta(dt) <= M0 (multi) or dt * eta(dt) <= J0 (scalar)."""
        power = 0.5 if self.regime == "multi" else 1.0
        # Allow for roundoff when the bound is attained exactly (eps = power).
        return bool(dt**power * float(self.eta(dt)) <= self.bound_const * (1 + 1e-12))

    def check_dimension(self, d):
        if self.regime == "scalar" and d != 1:
            raise ConfigurationError("a scalar-regime policy needs a model with d = 1")


def exponential_policy(scale, eps, *, rate=1.0, eta_scale=None, bound_const=None,
                       regime="multi", name="exponential") -> TruncationPolicy:
    """psi(v) = scale*e^(rate*v) with eta(dt) = eta_scale * dt**(-eps).

    ``eta_scale`` defaults to ``scale`` so that eta(1) = psi(0).  The bound
    constant defaults to the smallest value that satisfies both
    ``dt**0.5 * eta(dt) <= M0`` on (0, 1] and ``M0 >= psi(0) v 1``.
    """
    eta_scale = scale if eta_scale is None else eta_scale
    if not 0 < eps:
        raise ConfigurationError("eps must be positive")
    env = ExpEnvelope(scale, rate)
    eta = PowerEta(eta_scale, eps)
    if bound_const is None:
        power = 0.5 if regime == "multi" else 1.0
        if eps > power:
            raise ConfigurationError(
                f"eps = {eps} makes dt**{power} * eta(dt) unbounded on (0, 1]"
            )
        bound_const = max(eta_scale, scale, 1.0)
    return TruncationPolicy(env.psi, env.psi_inv, eta, float(bound_const),
                            regime=regime, name=name)


def default_scalar_policy(C0, alpha, beta, eta=None, J0=None) -> TruncationPolicy:
    """Scalar-regime policy with phi(r) = 4*C0*exp(max(alpha, beta+1) * r).

    ``eta`` defaults to ``8*C0*dt**-0.5``.  It must map (0, 1] into
    (4*C0, inf), decrease strictly and satisfy ``dt * eta(dt) <= J0``.
    """
    if C0 < 1:
        raise ConfigurationError("C0 must be at least 1")
    if alpha < 0 or beta < 0:
        raise ConfigurationError("alpha and beta must be nonnegative")
    rate = max(alpha, beta + 1)
    env = ExpEnvelope(4 * C0, rate)
    if eta is None:
        eta = PowerEta(8 * C0, 0.5)
    if J0 is None:
        prod = _DT_GRID * np.asarray(eta(_DT_GRID), dtype=float)
        # Still growing at the finest grid step: no finite J0 exists.
        if prod[-1] > prod[-2] * (1 + 1e-12):
            raise ConfigurationError("dt * eta(dt) is unbounded as dt -> 0")
        J0 = max(1.0, 4 * C0, float(np.max(prod)))
    if J0 < max(1.0, 4 * C0):
        raise ConfigurationError("J0 must be at least max(1, 4*C0)")
    vals = np.array([float(eta(dt)) for dt in _DT_GRID])
    if np.any(vals <= 4 * C0):
        raise ConfigurationError("eta must map (0, 1] into (4*C0, inf)")
    if np.any(np.diff(vals) <= 0):
        raise ConfigurationError("eta must be strictly decreasing in dt")
    if np.any(_DT_GRID * vals > J0):
        raise ConfigurationError("eta violates dt * eta(dt) <= J0")
    return TruncationPolicy(env.psi, env.psi_inv, eta, float(J0), regime="scalar",
                            growth_params=(C0, alpha, beta), name="scalar-default")


# -- radial projection -------------------------------------------------------


def _norms(z):
    acc = z[:, 0] * z[:, 0]
    for i in range(1, z.shape[1]):
        acc = acc + z[:, i] * z[:, i]
    return np.sqrt(acc)


def _project(z, radius):
    """Batch projection; returns (projected, norms).  Rows inside are untouched."""
    r = _norms(z)
    out = z.copy()
    outside = r > radius
    if np.any(outside):
        zo = z[outside] * (radius / r[outside])[:, None]
        # Rounding can leave the result a hair outside the ball; pull it in
        # so that projecting again is an exact no-op.
        over = _norms(zo) > radius
        while np.any(over):
            zo[over] = np.nextafter(zo[over], 0.0)
            over = _norms(zo) > radius
        out[outside] = zo
    return out, r


def radial_truncate(z, radius) -> np.ndarray:
    """Project ``z`` onto the closed ball of the given radius.

    Accepts a single state of shape ``(d,)`` or a batch ``(n, d)``.  Points
    inside the ball (including the boundary) are returned unchanged.
    """
    if radius < 0:
        raise ConfigurationError("radius must be nonnegative")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    out, _ = _project(np.atleast_2d(z), radius)
    return out[0] if single else out


def truncated_log_coefficients(model, policy, dt, z, radius=None):
    """Truncated transformed drift ``(n, d)`` and diffusion ``(n, d, m)``.

    Exactly zero at ``z == 0``.  ``radius`` may be passed to skip
    recomputing ``policy.radius(dt)`` in inner loops.
    """
    policy.check_dimension(model.d)
    if radius is None:
        radius = policy.radius(dt)
    zt, r = _project(z, radius)
    drift, diff = log_coefficients(model, zt)
    zero = r == 0
    if np.any(zero):
        drift[zero] = 0.0
        diff[zero] = 0.0
    return drift, diff


def truncated_log_drift(model, policy, dt, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return truncated_log_coefficients(model, policy, dt, z[None, :])[0][0]


def truncated_log_diffusion(model, policy, dt, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return truncated_log_coefficients(model, policy, dt, z[None, :])[1][0]


# -- admissibility -----------------------------------------------------------


@dataclass
class StepConditionReport:
    dt: float
    ok: bool
    eta: float
    required: float
    bound_ok: bool
    radius_defined: bool

    def line(self):
        status = "pass" if self.ok else "FAIL"
        return (f"dt=2^{math.log2(self.dt):g} {status} eta={self.eta:.6g} "
                f"required={self.required:.6g} bound_ok={self.bound_ok} "
                f"radius_defined={self.radius_defined}")


def validate_step_condition(policy, params, p, dt) -> StepConditionReport:
    """Check the step-size condition behind the strong-rate bound at one step.

    Multi-dimensional regime::

        eta(dt) >= psi(-J ln(dt**(p/2) eta(dt)**(p/2)) / ((J - p) min(J, K)))

    Scalar regime::

        eta(dt) >= phi(-J p ln(dt) / (2 (J - p) min(J, K)))

    The report also records the policy bound and whether the truncation
    radius exists at ``dt``; ``ok`` requires all three.
    """
    J, K = params.J, params.K
    if J <= p:
        raise ConfigurationError(f"the condition needs J > p (got J={J}, p={p})")
    if not 0 < dt <= 1:
        raise ConfigurationError("dt must lie in (0, 1]")
    e = float(policy.eta(dt))
    denom = (J - p) * min(J, K)
    if policy.regime == "multi":
        arg = -J * (p / 2) * (math.log(dt) + math.log(e)) / denom
    else:
        arg = -J * p * math.log(dt) / (2 * denom)
    required = float(policy.psi(arg))
    bound_ok = policy.bound_ok(dt)
    radius_defined = e >= policy.psi0
    ok = e >= required and bound_ok and radius_defined
    return StepConditionReport(dt, ok, e, required, bound_ok, radius_defined)


# -- presets -----------------------------------------------------------------

# Default eta scale for the two-species presets.  With eta = c * dt**-eps and
# psi(0) = 4 the radius only exists once c * dt**-eps >= 4, so c = 1 would rule
# out every step size coarser than 4**(-1/eps).
EX1_DEFAULT_SCALE = 100.0

POLICY_PATTERNS = ("ex1-eps<eps>[-c<scale>]", "ex2", "ex2-safe",
                   "lv-eps<eps>", "scalar-default")


def get_policy(name: str, model=None) -> TruncationPolicy:
    """Resolve a named preset, using ``model`` where the preset depends on it."""
    m = re.fullmatch(r"ex1-eps([0-9.]+)(?:-c([0-9.eE+]+))?", name)
    if m:
        eps = float(m.group(1))
        if not 0 < eps < 0.5:
            raise ConfigurationError("ex1 presets need eps in (0, 1/2)")
        c = float(m.group(2)) if m.group(2) else EX1_DEFAULT_SCALE
        return exponential_policy(4.0, eps, eta_scale=c, name=name)
    if name == "ex2":
        return exponential_policy(50.0, 0.5, eta_scale=50.0, bound_const=50.0, name=name)
    if name == "ex2-safe":
        return exponential_policy(160.0, 0.5, name=name)
    m = re.fullmatch(r"lv-eps([0-9.]+)", name)
    if m:
        if model is None or model.log_envelope is None:
            raise ConfigurationError(f"preset {name!r} needs a model with a known envelope")
        return exponential_policy(model.log_envelope, float(m.group(1)), name=name)
    if name == "scalar-default":
        if model is None or model.d != 1 or model.log_envelope is None:
            raise ConfigurationError("scalar-default needs a one-dimensional preset model")
        params = model.params
        return default_scalar_policy(max(1.0, model.log_envelope),
                                     params.alpha if params else 1.0,
                                     params.beta if params else 0.0)
    raise ConfigurationError(
        f"unknown policy {name!r}; patterns: {', '.join(POLICY_PATTERNS)}"
    )
