"""Monte Carlo experiments: strong errors, rates, positivity and moment checks.

Paths are processed in fixed-size chunks of consecutive path indices.  A
chunk's result depends only on its indices, and chunk results are merged by
index before any reduction, so every number is independent of the number of
worker processes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy
from scipy import stats
from scipy.special import ndtr

from . import __version__
from .brownian import brownian_batch, coarsen_increments
from .errors import ConfigurationError
from .integrators import ltem_paths, tem_paths
from .model import SdeModel, get_model
from .truncation import TruncationPolicy, get_policy, truncated_log_coefficients

__all__ = [
    "ExperimentConfig",
    "ErrorRow",
    "ErrorTable",
    "RateEstimate",
    "PositivityRow",
    "PositivityReport",
    "GaussianBoundReport",
    "MomentRow",
    "MomentReport",
    "coupled_errors",
    "strong_error",
    "fit_rate",
    "positivity_scan",
    "sample_trajectories",
    "gaussian_bound_check",
    "step_ratio",
    "moment_diagnostics",
    "run_manifest",
    "SCHEMES",
    "POSITIVITY_CELLS",
    "MAX_FAILURE_FRACTION",
]

SCHEMES = ("ltem", "ltem1d", "tem")
# (T, dt exponent) pairs of the positivity table.
POSITIVITY_CELLS = ((2.0, 11), (4.0, 10), (8.0, 9))
# An experiment losing more than this fraction of paths to overflow is invalid.
MAX_FAILURE_FRACTION = 1e-3
CHUNK_SIZE = 1000


@dataclass
class ExperimentConfig:
    model_name: str
    policy_name: str
    T: float = 1.0
    ref_exponent: int = 13
    ladder: tuple = (10, 9, 8, 7, 6)
    M: int = 1000
    p: float = 1.0
    seed: int = 42
    schemes: tuple = ("ltem",)
    y0: Optional[tuple] = None
    workers: int = 1
    # Library callers may pass objects directly; these win over the names.
    model: Optional[SdeModel] = field(default=None, repr=False, compare=False)
    policy: Optional[TruncationPolicy] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.ladder = tuple(int(e) for e in self.ladder)
        self.schemes = tuple(self.schemes)

    def validate(self):
        if self.M < 1:
            raise ConfigurationError("M must be at least 1")
        if self.T <= 0:
            raise ConfigurationError("T must be positive")
        if self.p <= 0:
            raise ConfigurationError("p must be positive")
        if len(self.ladder) == 0:
            raise ConfigurationError("the ladder is empty")
        if self.ref_exponent <= max(self.ladder):
            raise ConfigurationError("the reference step must be finer than every ladder step")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigurationError(f"unknown scheme {s!r}")
        for e in (self.ref_exponent,) + self.ladder:
            _n_steps(self.T, e)
        return self

    def resolve(self):
        """(model, policy, y0) with presets looked up by name where needed."""
        model = self.model or get_model(self.model_name)
        policy = self.policy or get_policy(self.policy_name, model)
        y0 = self.y0 or model.y0
        if y0 is None:
            raise ConfigurationError("no initial state given and the model has no preset")
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (model.d,) or np.any(y0 <= 0):
            raise ConfigurationError(f"bad initial state {y0.tolist()}")
        return model, policy, y0

    def as_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("model", "policy", "workers")}
        d["ladder"] = list(self.ladder)
        d["schemes"] = list(self.schemes)
        d["y0"] = None if self.y0 is None else list(self.y0)
        return d


def _n_steps(T, exponent):
    n = T * 2.0**exponent
    if n < 1 or n != math.floor(n):
        raise ConfigurationError(f"T = {T} is not a whole number of steps 2^-{exponent}")
    return int(n)


def _chunks(M):
    return [range(a, min(a + CHUNK_SIZE, M)) for a in range(0, M, CHUNK_SIZE)]


def _map(fn, tasks, workers):
    if workers == 0:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _run_scheme(scheme, model, policy, y0, dt, inc):
    """Terminal state and failure steps for one batch of paths."""
    n = inc.shape[1]
    if scheme == "tem":
        it = tem_paths(model, policy, np.tile(y0, (n, 1)), dt, inc)
        for _, y, failed in it:
            pass
        return y.copy(), failed.copy()
    if scheme == "ltem1d" and (model.d != 1 or policy.regime != "scalar"):
        raise ConfigurationError("ltem1d needs d = 1 and a scalar-regime policy")
    it = ltem_paths(model, policy, np.tile(np.log(y0), (n, 1)), dt, inc)
    for _, z, failed in it:
        pass
    return np.exp(z), failed.copy()


# -- strong error ------------------------------------------------------------


def _error_chunk(model, policy, y0, scheme, T, ref_exponent, exponents, seed, p, indices):
    n_fine = _n_steps(T, ref_exponent)
    inc = brownian_batch(seed, indices, model.m, 2.0**-ref_exponent, n_fine)
    ref_scheme = "ltem" if scheme == "tem" else scheme
    y_ref, f_ref = _run_scheme(ref_scheme, model, policy, y0, 2.0**-ref_exponent, inc)
    errs, fails = [], []
    for e in exponents:
        coarse = coarsen_increments(inc, 2 ** (ref_exponent - e), axis=0)
        y, f = _run_scheme(scheme, model, policy, y0, 2.0**-e, coarse)
        diff = y_ref - y
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        bad = (f_ref >= 0) | (f >= 0)
        errs.append(np.where(bad, np.nan, dist**p))
        fails.append(bad)
    return np.array(errs), np.array(fails)


def coupled_errors(model, policy, y0, T, ref_exponent, exponents, path_indices,
                   seed, p=1.0, scheme="ltem"):
    """Per-path ``|y_ref(T) - y_dt(T)|**p`` for each exponent, shape ``(k, n)``.

    Reference and coarse runs of a path consume the same fine increments;
    failed paths are ``nan``.  Exponents equal to ``ref_exponent`` are
    allowed and give exact zeros.
    """
    errs, _ = _error_chunk(model, policy, np.asarray(y0, dtype=float), scheme, T,
                           ref_exponent, tuple(exponents), seed, p, list(path_indices))
    return errs


@dataclass
class ErrorRow:
    dt_exponent: int
    dt: float
    error: float
    stderr: float
    failures: int


@dataclass
class ErrorTable:
    scheme: str
    rows: list
    M: int
    p: float = 1.0

    @property
    def valid(self) -> bool:
        return all(r.failures <= MAX_FAILURE_FRACTION * self.M for r in self.rows)


def strong_error(config: ExperimentConfig, scheme: Optional[str] = None) -> ErrorTable:
    """Monte Carlo estimate of ``E|y_ref(T) - y_dt(T)|**p`` over the ladder."""
    config.validate()
    scheme = scheme or config.schemes[0]
    model, policy, y0 = config.resolve()
    tasks = [(model, policy, y0, scheme, config.T, config.ref_exponent, config.ladder,
              config.seed, config.p, list(c)) for c in _chunks(config.M)]
    results = _map(_error_chunk, tasks, config.workers)
    errs = np.concatenate([r[0] for r in results], axis=1)
    fails = np.concatenate([r[1] for r in results], axis=1)
    rows = []
    for i, e in enumerate(config.ladder):
        ok = ~fails[i]
        vals = np.ascontiguousarray(errs[i][ok])
        n = vals.size
        mean = float(np.mean(vals)) if n else float("nan")
        se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        rows.append(ErrorRow(e, 2.0**-e, mean, se, int(fails[i].sum())))
    return ErrorTable(scheme, rows, config.M, config.p)


@dataclass
class RateEstimate:
    slope: float
    intercept: float
    r_squared: float


def fit_rate(table: ErrorTable) -> RateEstimate:
    """Least-squares slope of log2(error**(1/p)) against log2(dt).

    For ``p = 1`` this is the plain log-log slope.  Any zero error gives the
    sentinel ``RateEstimate(inf, nan, nan)`` instead of a fit.
    """
    rows = table.rows
    if len(rows) < 2:
        raise ConfigurationError("a rate needs at least two rows")
    err = np.array([r.error for r in rows], dtype=float)
    if np.any(err == 0):
        return RateEstimate(math.inf, math.nan, math.nan)
    if np.any(~np.isfinite(err)) or np.any(err < 0):
        raise ConfigurationError("errors must be finite and nonnegative")
    x = np.log2([r.dt for r in rows])
    y = np.log2(err) / table.p
    fit = stats.linregress(x, y)
    return RateEstimate(float(fit.slope), float(fit.intercept), float(fit.rvalue**2))


# -- positivity --------------------------------------------------------------


@dataclass
class PositivityRow:
    scheme: str
    component: int  # 1-based, as in y_k^1
    T: float
    dt_exponent: int
    percent: float
    failures: int = 0


@dataclass
class PositivityReport:
    rows: list
    M: int

    def percent(self, scheme, component, T, dt_exponent):
        for r in self.rows:
            if (r.scheme, r.component, r.T, r.dt_exponent) == (scheme, component, T, dt_exponent):
                return r.percent
        raise KeyError((scheme, component, T, dt_exponent))


def _positivity_chunk(model, policy, y0, scheme, T, exponent, seed, indices):
    n = _n_steps(T, exponent)
    dt = 2.0**-exponent
    inc = brownian_batch(seed, indices, model.m, dt, n)
    hit = np.zeros((len(indices), model.d), dtype=bool)
    if scheme == "tem":
        it = tem_paths(model, policy, np.tile(y0, (len(indices), 1)), dt, inc)
        for _, y, failed in it:
            hit |= y <= 0
    else:
        it = ltem_paths(model, policy, np.tile(np.log(y0), (len(indices), 1)), dt, inc)
        for _, z, failed in it:
            hit |= np.exp(z) <= 0
    return hit, failed.copy()


def positivity_scan(config: ExperimentConfig, cells=POSITIVITY_CELLS) -> PositivityReport:
    """Percentage of paths with at least one non-positive value, per component.

    ``cells`` lists ``(T, dt_exponent)`` pairs; ``config.T`` and the ladder are
    not used.  Paths that fail are counted in ``failures`` and excluded from
    the percentage.
    """
    if config.M < 1:
        raise ConfigurationError("M must be at least 1")
    model, policy, y0 = config.resolve()
    rows = []
    for scheme in config.schemes:
        for T, e in cells:
            tasks = [(model, policy, y0, scheme, float(T), int(e), config.seed, list(c))
                     for c in _chunks(config.M)]
            res = _map(_positivity_chunk, tasks, config.workers)
            hit = np.concatenate([r[0] for r in res])
            failed = np.concatenate([r[1] for r in res]) >= 0
            ok = ~failed
            n_ok = int(ok.sum())
            for i in range(model.d):
                pct = 100.0 * hit[ok, i].sum() / n_ok if n_ok else float("nan")
                rows.append(PositivityRow(scheme, i + 1, float(T), int(e), float(pct),
                                          int(failed.sum())))
    return PositivityReport(rows, config.M)


def sample_trajectories(model, policy, y0, T, exponent, seed, n_paths=10,
                        schemes=("tem", "ltem")):
    """Full trajectories of the first ``n_paths`` paths: scheme -> (N+1, n, d)."""
    n = _n_steps(T, exponent)
    dt = 2.0**-exponent
    inc = brownian_batch(seed, range(n_paths), model.m, dt, n)
    y0 = np.asarray(y0, dtype=float)
    out = {}
    for scheme in schemes:
        states = np.empty((n + 1, n_paths, model.d))
        if scheme == "tem":
            for k, y, _ in tem_paths(model, policy, np.tile(y0, (n_paths, 1)), dt, inc):
                states[k] = y
        else:
            for k, z, _ in ltem_paths(model, policy, np.tile(np.log(y0), (n_paths, 1)), dt, inc):
                states[k] = np.exp(z)
        out[scheme] = states
    return np.arange(n + 1) * dt, out


# -- moment and Gaussian diagnostics ------------------------------------------


@dataclass
class GaussianBoundReport:
    m: int
    gamma: float
    dt: float
    estimate: float
    stderr: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.estimate + 4 * self.stderr <= self.bound

    @property
    def closed_form(self) -> Optional[float]:
        """Exact E[exp(gamma |Q|)] when m = 1."""
        if self.m != 1:
            return None
        s = self.gamma * math.sqrt(self.dt)
        return 2 * math.exp(s * s / 2) * float(ndtr(s))


def gaussian_bound_check(m, gamma, dt, n_samples=1_000_000, seed=0) -> GaussianBoundReport:
    """Monte Carlo E[exp(gamma |Q|)], Q ~ N(0, dt I_m), against 2^m exp(gamma^2 dt / 2)."""
    if gamma <= 0 or dt <= 0:
        raise ConfigurationError("gamma and dt must be positive")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n_samples, m)) * math.sqrt(dt)
    vals = np.exp(gamma * np.sqrt(np.sum(q * q, axis=1)))
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n_samples))
    bound = 2.0**m * math.exp(gamma * gamma * dt / 2)
    return GaussianBoundReport(m, gamma, dt, est, se, bound)


def step_ratio(model, policy, z, dt, tau, dB_partial):
    """``y(t_k + tau) / y(t_k)`` along the frozen-coefficient step, per component.

    Within a step the continuous form has ``z(t) = z_k + drift_trunc(z_k) (t -
    t_k) + diffusion_trunc(z_k) (B(t) - B(t_k))``, so the ratio is the
    exponential of that increment.
    """
    drift, diff = truncated_log_coefficients(model, policy, dt, np.atleast_2d(z))
    dB = np.atleast_2d(dB_partial)
    acc = diff[:, :, 0] * dB[:, None, 0]
    for j in range(1, diff.shape[2]):
        acc = acc + diff[:, :, j] * dB[:, None, j]
    return np.exp(drift * tau + acc)


def _moment_chunk(model, policy, y0, T, ref_exponent, exponent, seed, J, K, p_bar, indices):
    n_fine = _n_steps(T, ref_exponent)
    inc = brownian_batch(seed, indices, model.m, 2.0**-ref_exponent, n_fine)
    half = coarsen_increments(inc, 2 ** (ref_exponent - exponent - 1), axis=0)
    full = half[0::2] + half[1::2]
    dt = 2.0**-exponent
    n = len(indices)
    N = full.shape[0]
    mom = np.zeros(N + 1)
    inv = np.zeros(N + 1)
    ratio = np.zeros((N, model.d))
    for k, z, _ in ltem_paths(model, policy, np.tile(np.log(y0), (n, 1)), dt, full):
        y = np.exp(z)
        norm = np.sqrt(np.sum(y * y, axis=1))
        mom[k] = np.sum(norm**J)
        inv[k] = np.sum(norm ** (-K))
        if k < N:
            r = step_ratio(model, policy, z, dt, dt / 2, half[2 * k])
            ratio[k] = np.sum(r**p_bar, axis=0)
    return mom, inv, ratio


@dataclass
class MomentRow:
    dt_exponent: int
    moment: float  # sup_k E|y_k|^J
    inverse_moment: float  # sup_k E|y_k|^-K
    ratio_moment: float  # sup_k max_i E[(y_i(t_k + dt/2) / y_i(t_k))^p_bar]


@dataclass
class MomentReport:
    rows: list
    J: float
    K: float
    p_bar: float

    def spread(self, attr):
        vals = np.array([getattr(r, attr) for r in self.rows])
        return float(vals.max() / vals.min())

    @property
    def flat(self) -> bool:
        """Each quantity varies by less than a factor 2 across the ladder."""
        return all(self.spread(a) < 2 for a in ("moment", "inverse_moment", "ratio_moment"))


def moment_diagnostics(config: ExperimentConfig, J, K, p_bar=2.0) -> MomentReport:
    """Sup-over-grid Monte Carlo moments of the LTEM solution for each ladder step.

    The half-step increments come from the same fine Brownian path, so the
    reference exponent must be at least one finer than every ladder step.
    """
    config.validate()
    model, policy, y0 = config.resolve()
    rows = []
    for e in config.ladder:
        tasks = [(model, policy, y0, config.T, config.ref_exponent, e, config.seed,
                  J, K, p_bar, list(c)) for c in _chunks(config.M)]
        res = _map(_moment_chunk, tasks, config.workers)
        mom = sum(r[0] for r in res) / config.M
        inv = sum(r[1] for r in res) / config.M
        ratio = sum(r[2] for r in res) / config.M
        rows.append(MomentRow(e, float(mom.max()), float(inv.max()), float(ratio.max())))
    return MomentReport(rows, J, K, p_bar)


# -- provenance ----------------------------------------------------------------


def config_hash(config_dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run_manifest(command, config_dict) -> dict:
    return {
        "command": command,
        "config": config_dict,
        "config_sha256": config_hash(config_dict),
        "versions": {
            "ltem": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "argv": sys.argv[1:],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
