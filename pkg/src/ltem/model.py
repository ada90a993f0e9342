"""SDE models with positive solutions.

Coefficients are plain callables evaluated on batches of states: ``drift``
maps an ``(n, d)`` array to ``(n, d)`` and ``diffusion`` maps it to
``(n, d, m)``.  The single-state helpers :func:`eval_drift` and
:func:`eval_diffusion` check the positive-cone precondition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "AssumptionParams",
    "SdeModel",
    "ClauseReport",
    "AssumptionReport",
    "eval_drift",
    "eval_diffusion",
    "make_lv_model",
    "make_lv3_model",
    "check_assumptions",
    "assumption_slacks",
    "log_uniform_sampler",
    "get_model",
    "MODEL_NAMES",
]


@dataclass(frozen=True)
class AssumptionParams:
    """Constants of the growth, boundary and monotonicity conditions.

    Only :func:`check_assumptions` and the step-size admissibility check read
    these; the integrators never do.
    """

    alpha: float
    beta: float
    J: float
    K: float
    L1: float
    L2: float = 1.0
    p_star: float = 3.0
    y_star: tuple = ()
    H: tuple = ()

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be nonnegative")
        if self.J <= 1:
            raise ConfigurationError("J must exceed 1")
        if self.K <= 0 or self.L1 <= 0 or self.L2 <= 0:
            raise ConfigurationError("K, L1 and L2 must be positive")
        if self.p_star <= 2:
            raise ConfigurationError("p_star must exceed 2")

    def moment_hypothesis(self) -> bool:
        """J >= 2(alpha + 1) and K >= 2 beta."""
        return self.J >= 2 * (self.alpha + 1) and self.K >= 2 * self.beta


@dataclass(frozen=True)
class SdeModel:
    name: str
    d: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    y0: Optional[tuple] = None
    params: Optional[AssumptionParams] = None
    # Coefficients are polynomial-like and may be evaluated off the positive
    # cone (used by the truncated EM baseline).
    extends_to_real: bool = True
    # c such that sup_{|z| <= v} |drift~| v |diffusion~|^2 <= c * e^v for the
    # log-transformed coefficients; None when unknown.
    log_envelope: Optional[float] = None
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ConfigurationError("d and m must be positive")


def _check_positive(y, d):
    y = np.asarray(y, dtype=float)
    if y.shape != (d,):
        raise DomainError(f"expected a state of shape ({d},), got {y.shape}")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise DomainError(f"state {y} is not in the positive cone")
    return y


def eval_drift(model: SdeModel, y) -> np.ndarray:
    y = _check_positive(y, model.d)
    return np.asarray(model.drift(y[None, :]))[0]


def eval_diffusion(model: SdeModel, y) -> np.ndarray:
    y = _check_positive(y, model.d)
    s = np.asarray(model.diffusion(y[None, :]))[0]
    if s.shape != (model.d, model.m):
        raise ConfigurationError(
            f"diffusion returned shape {s.shape}, expected {(model.d, model.m)}"
        )
    return s


# -- Lotka-Volterra family --------------------------------------------------


def _lv_drift(b, A, y):
    d = b.shape[0]
    out = np.empty_like(y)
    for i in range(d):
        acc = b[i] + A[i, 0] * y[:, 0]
        for j in range(1, d):
            acc = acc + A[i, j] * y[:, j]
        out[:, i] = y[:, i] * acc
    return out


def _lv_diffusion(mu, y):
    n, d = y.shape
    out = np.zeros((n, d, d))
    for i in range(d):
        out[:, i, i] = y[:, i] * mu[i]
    return out


def make_lv_model(b, A, mu, *, name=None, y0=None, params=None) -> SdeModel:
    """Stochastic Lotka-Volterra competition model.

    ``dy = diag(y) [(b + A y) dt + diag(mu) dB]`` with one independent
    Brownian channel per species, so ``m == d``.
    """
    b = np.array(b, dtype=float).reshape(-1)
    mu = np.array(mu, dtype=float).reshape(-1)
    A = np.array(A, dtype=float)
    d = b.shape[0]
    if A.ndim == 1 and d == 1:
        A = A.reshape(1, 1)
    if A.shape != (d, d) or mu.shape != (d,):
        raise ConfigurationError(
            f"dimension mismatch: b {b.shape}, A {A.shape}, mu {mu.shape}"
        )
    b.flags.writeable = False
    A.flags.writeable = False
    mu.flags.writeable = False
    # Transformed drift is b - mu^2/2 + A e^z and |e^z| <= sqrt(d) e^|z|.
    envelope = max(
        float(np.linalg.norm(b - 0.5 * mu * mu) + np.linalg.norm(A, 2) * np.sqrt(d)),
        float(mu @ mu),
        1.0,
    )
    return SdeModel(
        name=name or f"lv{d}",
        d=d,
        m=d,
        drift=partial(_lv_drift, b, A),
        diffusion=partial(_lv_diffusion, mu),
        y0=None if y0 is None else tuple(float(v) for v in y0),
        params=params,
        log_envelope=envelope,
        description=f"LV b={b.tolist()} A={A.tolist()} mu={mu.tolist()}",
    )


def _lv3_drift(y):
    y1, y2, y3 = y[:, 0], y[:, 1], y[:, 2]
    return np.stack(
        [50 * y1 - 55 * y1 * y1, 30 * y2 - 10 * y2 * y2, 20 * y3 - 15 * y3 * y3],
        axis=1,
    )


def _lv3_diffusion(y):
    y1, y2, y3 = y[:, 0], y[:, 1], y[:, 2]
    s = y1 + y2 + y3
    n1 = 7 + (np.sin(y1) + np.sin(y2) + np.sin(y3)) / (1 + s)
    n2 = 2 + s / (1 + s * s)
    n3 = 5 + (np.cos(y1) + np.cos(y2)) / (1 + y3 * y3)
    return np.stack([y1 * n1, y2 * n2, y3 * n3], axis=1)[:, :, None]


LV3_PARAMS = AssumptionParams(
    alpha=1, beta=0, J=4, K=0.1, L1=60, L2=350, p_star=3,
    y_star=(0.05, 0.05, 0.05), H=(200, 40, 94),
)


def make_lv3_model() -> SdeModel:
    """Three-species LV system driven by a single shared Brownian motion."""
    return SdeModel(
        name="lv3",
        d=3,
        m=1,
        drift=_lv3_drift,
        diffusion=_lv3_diffusion,
        y0=(0.5, 2.0, 1.0),
        params=LV3_PARAMS,
        # |drift~| <= 52.8 + 53.2 e^v and |diffusion~|^2 <= 155.25.
        log_envelope=160.0,
        description="3-species LV with state-dependent shared noise",
    )


# Constants below were chosen by hand; the sampled diagnostics in
# check_assumptions find no violation for the two-species presets.
_PRESETS = {
    "lv2": lambda: make_lv_model(
        [2, 4], [[-4, 0], [0, -4]], [1, 2], name="lv2", y0=(1, 2),
        params=AssumptionParams(
            alpha=1, beta=0, J=4, K=0.5, L1=12, L2=8, p_star=3,
            y_star=(0.25, 0.2), H=(3.5, 10),
        ),
    ),
    "lv2-fig2": lambda: make_lv_model(
        [10, 6], [[-10, 0], [0, -8]], [3, 2], name="lv2-fig2", y0=(1, 2),
        params=AssumptionParams(
            alpha=1, beta=0, J=4, K=1, L1=26, L2=19, p_star=3,
            y_star=(0.05, 0.2), H=(23.5, 12),
        ),
    ),
    "lv3": make_lv3_model,
    "lv1": lambda: make_lv_model(
        [2], [[-4]], [1], name="lv1", y0=(1,),
        params=AssumptionParams(
            alpha=1, beta=0, J=4, K=0.5, L1=8, L2=3, p_star=3,
            y_star=(0.25,), H=(3.5,),
        ),
    ),
}

MODEL_NAMES = tuple(_PRESETS)


def get_model(name: str) -> SdeModel:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}"
        ) from None


# -- sampled assumption diagnostics ----------------------------------------


def log_uniform_sampler(low=1e-3, high=1e3):
    """Sampler drawing each component log-uniformly from [low, high]."""

    def sample(rng, n, d):
        return np.exp(rng.uniform(np.log(low), np.log(high), size=(n, d)))

    return sample


def _norm(a, axis=-1):
    return np.sqrt(np.sum(a * a, axis=axis))


def assumption_slacks(model: SdeModel, params: AssumptionParams, a, b):
    """Slack (right side minus left side) of each clause at the pairs (a, b).

    Returns a dict of arrays; a negative entry is a violation.  The
    boundary clauses are evaluated at ``a`` only, per component, and are
    ``nan`` where the component lies outside the clause's range.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    for y in (a, b):
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise DomainError("sampler produced points outside the positive cone")
    la, lb = model.drift(a), model.drift(b)
    sa, sb = model.diffusion(a), model.diffusion(b)
    na, nb = _norm(a), _norm(b)
    dist = _norm(a - b)
    dl = _norm(la - lb)
    ds = np.sqrt(np.sum((sa - sb) ** 2, axis=(1, 2)))

    al, be = params.alpha, params.beta
    growth = 1 + na**al + nb**al + na ** (-be) + nb ** (-be)
    out = {"lipschitz": params.L1 * growth * dist - np.maximum(dl, ds)}

    mono_lhs = np.sum((a - b) * (la - lb), axis=1) + 0.5 * (params.p_star - 1) * ds**2
    out["monotonicity"] = params.L2 * dist**2 - mono_lhs

    if params.y_star:
        ys = np.asarray(params.y_star, dtype=float)
        H = np.asarray(params.H, dtype=float)
        row_sq = np.sum(sa * sa, axis=2)
        lower = a * la - 0.5 * (params.K + 1) * row_sq
        upper = H * (1 + a * a) - (a * la + 0.5 * (params.J - 1) * row_sq)
        out["lower-boundary"] = np.where(a < ys, lower, np.nan)
        out["upper-boundary"] = np.where(a >= ys, upper, np.nan)
    return out


@dataclass
class ClauseReport:
    name: str
    n_checked: int
    worst_slack: float
    violations: int
    witness: Optional[tuple] = None

    @property
    def ok(self) -> bool:
        return self.violations == 0


@dataclass
class AssumptionReport:
    clauses: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.clauses)

    def lines(self):
        for c in self.clauses:
            status = "ok" if c.ok else "VIOLATED"
            line = (f"{c.name:15s} {status:8s} checked={c.n_checked} "
                    f"worst_slack={c.worst_slack:.6g} violations={c.violations}")
            if c.witness is not None:
                line += f" witness={c.witness}"
            yield line


def check_assumptions(model: SdeModel, params: AssumptionParams, sampler=None,
                      n_samples: int = 10_000, seed: int = 0,
                      rtol: float = 1e-12) -> AssumptionReport:
    """Try to falsify the model's assumptions by sampling the positive cone.

    A clean report does not certify anything; it only means no violating
    sample was found.  The boundary clauses additionally get samples with
    one component pushed below (or above) its threshold ``y_star[i]``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be at least 1")
    sampler = sampler or log_uniform_sampler()
    rng = np.random.default_rng(seed)
    d = model.d
    a = sampler(rng, n_samples, d)
    b = sampler(rng, n_samples, d)
    if params.y_star:
        ys = np.asarray(params.y_star, dtype=float)
        lo = a.copy()
        hi = a.copy()
        cols = rng.integers(0, d, size=n_samples)
        rows = np.arange(n_samples)
        lo[rows, cols] = ys[cols] * rng.uniform(1e-6, 1.0, size=n_samples)
        hi[rows, cols] = ys[cols] * np.exp(rng.uniform(0, np.log(1e6), size=n_samples))
        a = np.concatenate([a, lo, hi])
        b = np.concatenate([b, b, b])

    slacks = assumption_slacks(model, params, a, b)
    clauses = []
    for name, s in slacks.items():
        if s.ndim == 2:
            idx_rows = np.repeat(np.arange(s.shape[0]), s.shape[1])
            flat = s.reshape(-1)
        else:
            idx_rows = np.arange(s.shape[0])
            flat = s
        valid = ~np.isnan(flat)
        if not np.any(valid):
            clauses.append(ClauseReport(name, 0, float("nan"), 0))
            continue
        vals = flat[valid]
        rows = idx_rows[valid]
        # Roundoff allowance proportional to the size of the compared terms.
        scale = rtol * (1 + np.abs(vals))
        bad = vals < -scale
        k = int(np.argmin(vals))
        witness = None
        if np.any(bad):
            r = rows[k]
            witness = (tuple(round(float(v), 6) for v in a[r]),
                       tuple(round(float(v), 6) for v in b[r]))
        clauses.append(ClauseReport(name, int(vals.size), float(vals[k]),
                                    int(bad.sum()), witness))
    return AssumptionReport(clauses)
