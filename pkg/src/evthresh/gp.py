"""Generalized Pareto (GP) and binomial-GP (BGP) distribution functions.

All density work is done on the log scale.  Functions accept numpy arrays
and broadcast over observations and parameter draws alike, so the same
code serves single evaluations and whole posterior samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

# |shape| at or below this uses the exponential-limit formulas
XI_EPS = 1e-6


@dataclass(frozen=True)
class GpParams:
    scale: float
    shape: float

    def __post_init__(self):
        if np.ndim(self.scale) == 0 and not self.scale > 0:
            raise ValueError(f"GP scale must be positive, got {self.scale}")

    def upper_endpoint(self) -> float:
        """Largest attainable excess; infinite unless shape < 0."""
        if self.shape < -XI_EPS:
            return -self.scale / self.shape
        return np.inf


@dataclass(frozen=True)
class BgpParams:
    p_exceed: float
    gp: GpParams

    def __post_init__(self):
        if np.ndim(self.p_exceed) == 0 and not 0.0 <= self.p_exceed <= 1.0:
            raise ValueError(f"p_exceed must lie in [0, 1], got {self.p_exceed}")


@dataclass(frozen=True)
class Threshold:
    level: float
    quantile_prob: float
    n_exceed: int

    @classmethod
    def from_quantile(cls, data, q: float) -> "Threshold":
        """Threshold at the (type-7, linearly interpolated) sample quantile ``q``."""
        x = np.asarray(data, dtype=float)
        level = float(np.quantile(x, q))
        return cls(level, float(q), int(np.count_nonzero(x > level)))

    @classmethod
    def at_level(cls, data, level: float) -> "Threshold":
        x = np.asarray(data, dtype=float)
        n_exceed = int(np.count_nonzero(x > level))
        return cls(float(level), 1.0 - n_exceed / x.size, n_exceed)


@dataclass(frozen=True)
class MleFit:
    estimate: GpParams
    shape_ci_lo: float
    shape_ci_hi: float
    max_loglik: float
    converged: bool


def _check_excess(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError("excesses must be finite and nonnegative")
    return y


def _scaled_log1p(y, scale, shape):
    """Return ``(h, ok)`` with h = log1p(shape*y/scale)/shape and ok marking the support.

    For |shape| <= XI_EPS the limit y/scale is used.
    """
    y, scale, shape = np.broadcast_arrays(
        np.asarray(y, dtype=float), np.asarray(scale, dtype=float), np.asarray(shape, dtype=float)
    )
    small = np.abs(shape) <= XI_EPS
    safe_shape = np.where(small, 1.0, shape)
    z = safe_shape * y / scale
    ok = small | (z > -1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(small, y / scale, np.log1p(np.where(ok, z, 0.0)) / safe_shape)
    return h, ok, small, safe_shape


def logpdf(y, scale, shape):
    """Vectorized GP log density; -inf outside the support."""
    h, ok, small, safe_shape = _scaled_log1p(y, scale, shape)
    y = np.asarray(y, dtype=float)
    # (1 + 1/xi) * log1p(z) = h + log1p(z)
    with np.errstate(invalid="ignore", divide="ignore"):
        extra = np.where(small, 0.0, h * safe_shape)
        out = -np.log(scale) - h - extra
    out = np.where(ok & (y >= 0), out, -np.inf)
    return out


def logsf(y, scale, shape):
    """Vectorized log survival function log(1 - G(y)); -inf beyond a finite endpoint."""
    h, ok, _, _ = _scaled_log1p(y, scale, shape)
    return np.where(ok, -h, -np.inf)


def cdf(y, scale, shape):
    return -np.expm1(logsf(y, scale, shape))


def quantile(q, scale, shape):
    q, scale, shape = np.broadcast_arrays(
        np.asarray(q, dtype=float), np.asarray(scale, dtype=float), np.asarray(shape, dtype=float)
    )
    small = np.abs(shape) <= XI_EPS
    safe_shape = np.where(small, 1.0, shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        l1q = np.log1p(-q)
        y = np.where(small, -scale * l1q, scale * np.expm1(-safe_shape * l1q) / safe_shape)
        y = np.where((q == 1.0) & (shape < -XI_EPS), -scale / safe_shape, y)
    return y


def gp_logpdf(y, p: GpParams):
    """Log density of GP(scale, shape) at excess ``y``."""
    return logpdf(_check_excess(y), p.scale, p.shape)[()]


def gp_cdf(y, p: GpParams):
    """GP distribution function; equals 1 at and beyond a finite upper endpoint."""
    return cdf(_check_excess(y), p.scale, p.shape)[()]


def gp_quantile(q, p: GpParams):
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)) or not np.all(np.isfinite(q)):
        raise ValueError("quantile probability must lie in [0, 1)")
    if np.any(q == 1.0) and p.shape >= -XI_EPS:
        raise ValueError("the GP quantile at probability 1 is infinite when shape >= 0")
    return quantile(q, p.scale, p.shape)[()]


def gp_sample(n: int, p: GpParams, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` GP variates by inversion."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return quantile(rng.uniform(size=n), p.scale, p.shape)


def log_obs_density(x, level, p_exceed, scale, shape):
    """Vectorized BGP log density of raw observations relative to threshold ``level``."""
    x = np.asarray(x, dtype=float)
    above = x > level
    with np.errstate(divide="ignore"):
        below_part = np.log1p(-np.asarray(p_exceed, dtype=float))
        above_part = np.log(p_exceed) + logpdf(np.where(above, x - level, 0.0), scale, shape)
    return np.where(above, above_part, below_part)


def bgp_log_obs_density(x, u: Threshold, th: BgpParams):
    """log f_u(x | theta): log(1 - p_u) at or below u, log p_u + log g(x - u) above."""
    return log_obs_density(x, u.level, th.p_exceed, th.gp.scale, th.gp.shape)[()]


def bgp_loglik(data, u: Threshold, th: BgpParams) -> float:
    """BGP log-likelihood; observations at or below u enter only through their count."""
    x = np.asarray(data, dtype=float)
    if x.size == 0:
        raise ValueError("data must be non-empty")
    above = x[x > u.level]
    n_below = x.size - above.size
    with np.errstate(divide="ignore"):
        total = n_below * np.log1p(-th.p_exceed) if n_below else 0.0
        if above.size:
            total += above.size * np.log(th.p_exceed)
            total += np.sum(logpdf(above - u.level, th.gp.scale, th.gp.shape))
    return float(total)


def implied_log_params(log_p, scale, shape, dv):
    """Vectorized threshold shift by ``dv >= 0``: returns (log p_v, scale_v).

    log p_v is -inf where the upper endpoint lies at or below the new threshold.
    Shapes within XI_EPS of zero are treated as exactly zero, so the scale is
    unchanged there; this keeps the threshold-shift identities exact.
    """
    shape_eff = np.where(np.abs(shape) <= XI_EPS, 0.0, shape)
    scale_v = scale + shape_eff * dv
    return log_p + logsf(dv, scale, shape), scale_v


def implied_at_threshold(th: BgpParams, u: float, v: float) -> BgpParams:
    """BGP parameters implied at a higher threshold ``v`` by those at ``u``."""
    if v < u:
        raise ValueError(f"v={v} must not be below u={u}")
    if v == u:
        return th
    with np.errstate(divide="ignore"):
        log_pv, scale_v = implied_log_params(np.log(th.p_exceed), th.gp.scale, th.gp.shape, v - u)
    p_v = float(np.exp(log_pv))
    if p_v == 0.0:
        # endpoint reached; keep a valid scale so the record stays well-formed
        scale_v = max(float(scale_v), np.finfo(float).tiny)
    return BgpParams(p_v, GpParams(float(scale_v), th.gp.shape))


def marginal_log_cdf(z, level, p_exceed, scale, shape):
    """Vectorized log F(z; theta) for z >= level."""
    lsf = logsf(np.asarray(z, dtype=float) - level, scale, shape)
    with np.errstate(divide="ignore"):
        return np.log1p(-p_exceed * np.exp(lsf))


def bgp_marginal_cdf(z, u: Threshold, th: BgpParams):
    """P(X <= z) under the BGP model, defined only above the threshold."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= u.level):
        raise ValueError("the BGP model says nothing about levels at or below the threshold")
    lsf = logsf(z - u.level, th.gp.scale, th.gp.shape)
    return (1.0 - th.p_exceed * np.exp(lsf))[()]


# --- maximum likelihood ------------------------------------------------------

def gp_loglik(excesses, scale, shape) -> float:
    return float(np.sum(logpdf(excesses, scale, shape)))


def _moment_start(y):
    mean, var = y.mean(), y.var()
    if var <= 0:
        return mean, 0.0
    ratio = mean * mean / var
    return 0.5 * mean * (ratio + 1.0), 0.5 * (1.0 - ratio)


def _profile_loglik(y, shape, scale_hint):
    """Maximize the GP log-likelihood over scale with shape held fixed."""
    ymax = y.max()
    lo = np.log(-shape * ymax) + 1e-12 if shape < 0 else np.log(scale_hint) - 20.0
    hi = max(np.log(scale_hint), lo) + 20.0

    def nll(ls):
        return -gp_loglik(y, np.exp(ls), shape)

    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    return -res.fun


def fit_gp_mle(excesses, *, profile: bool = True, shape_floor: float = -1.0,
               level: float = 0.95) -> MleFit:
    """Maximum likelihood fit of a GP distribution with a profile-likelihood shape interval.

    The search runs over (log scale, shape) with shape >= ``shape_floor``,
    from a moment-based start and two perturbations of it.  Excesses are
    rescaled by their mean first, which makes the fit exactly scale
    equivariant.  If no deviance crossing is found on one side the interval
    is left open there (reported as +/-inf).
    """
    y = _check_excess(excesses)
    if y.size < 2:
        raise ValueError("need at least two excesses")
    s = y.mean()
    if not s > 0:
        raise ValueError("excesses are all zero")
    ys = y / s
    ymax = ys.max()

    def nll(par):
        ls, xi = par
        if xi < shape_floor:
            return np.inf
        val = -gp_loglik(ys, np.exp(ls), xi)
        return val if np.isfinite(val) else np.inf

    sc0, xi0 = _moment_start(ys)
    xi0 = float(np.clip(xi0, shape_floor + 0.05, 1.0))
    if xi0 < 0:
        sc0 = max(sc0, -1.5 * xi0 * ymax)
    starts = [(np.log(sc0), xi0), (np.log(sc0), xi0 + 0.2), (np.log(sc0 * 1.5), max(xi0 - 0.2, shape_floor + 0.01))]
    best = None
    for st in starts:
        if not np.isfinite(nll(st)):
            st = (np.log(max(sc0, ymax) * 2.0), 0.0)
        res = optimize.minimize(nll, st, method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    ls_hat, xi_hat = best.x
    loglik = -best.fun - y.size * np.log(s)
    converged = bool(best.success and np.isfinite(best.fun))
    est = GpParams(float(np.exp(ls_hat) * s), float(xi_hat))

    lo, hi = -np.inf, np.inf
    if profile and converged:
        crit = stats.chi2.ppf(level, 1)
        lmax = -best.fun
        sc_hint = np.exp(ls_hat)

        def excess_dev(xi):
            return 2.0 * (lmax - _profile_loglik(ys, xi, sc_hint)) - crit

        lo = _crossing(excess_dev, xi_hat, -1, shape_floor)
        hi = _crossing(excess_dev, xi_hat, +1, xi_hat + 64.0)
        lo = min(lo, xi_hat)
        hi = max(hi, xi_hat)
    return MleFit(est, float(lo), float(hi), float(loglik), converged)


def _crossing(fn, start, direction, limit):
    """Expand outward from ``start`` by doubling steps and bisect the sign change of ``fn``."""
    step = 0.05
    inner = start
    while True:
        outer = start + direction * step
        if direction * (outer - limit) >= 0:
            outer = limit
        val = fn(outer)
        if val > 0:
            return optimize.brentq(fn, min(inner, outer), max(inner, outer), xtol=1e-10)
        if outer == limit:
            return direction * np.inf
        inner = outer
        step *= 2.0
