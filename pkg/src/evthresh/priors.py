"""Prior densities for the GP and binomial parameters, and the Cauchy-scale calibration."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize

FAMILIES = ("jeffreys", "flat", "mdi", "mdi_a", "cauchy")

# lower limit of the shape parameter under each family
SHAPE_LOWER = {"jeffreys": -0.5, "flat": -np.inf, "mdi": -1.0, "mdi_a": -1.0, "cauchy": -1.0}


@dataclass(frozen=True)
class PriorSpec:
    family: str = "mdi_a"
    a: float = 0.6
    A: float = 0.154

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}; choose from {FAMILIES}")
        if self.family == "mdi_a" and not self.a > 0:
            raise ValueError("MDI(a) prior needs a > 0")
        if self.family == "cauchy" and not self.A > 0:
            raise ValueError("truncated Cauchy prior needs A > 0")

    @property
    def label(self) -> str:
        if self.family == "mdi_a":
            return f"mdi_a({self.a:g})"
        if self.family == "cauchy":
            return f"cauchy({self.A:g})"
        return self.family

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family == "mdi_a":
            d["a"] = self.a
        elif self.family == "cauchy":
            d["A"] = self.A
        return d


def log_prior_shape(shape, spec: PriorSpec):
    """Unnormalized log prior of the shape parameter alone (the 1/scale factor excluded)."""
    xi = np.asarray(shape, dtype=float)
    fam = spec.family
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam == "flat":
            out = np.zeros_like(xi)
        elif fam == "jeffreys":
            out = -np.log1p(xi) - 0.5 * np.log1p(2.0 * xi)
            out = np.where(xi > -0.5, out, -np.inf)
        elif fam == "mdi":
            out = np.where(xi >= -1.0, -(xi + 1.0), -np.inf)
        elif fam == "mdi_a":
            out = np.where(xi >= -1.0, np.log(spec.a) - spec.a * (xi + 1.0), -np.inf)
        else:
            out = np.where(xi >= -1.0, -np.log1p((xi / spec.A) ** 2), -np.inf)
    return out


def log_prior_shape_scalar(xi: float, spec: PriorSpec) -> float:
    """Plain-float version of :func:`log_prior_shape` for optimizer loops."""
    fam = spec.family
    if fam == "flat":
        return 0.0
    if fam == "jeffreys":
        return -math.log1p(xi) - 0.5 * math.log1p(2.0 * xi) if xi > -0.5 else -math.inf
    if xi < -1.0:
        return -math.inf
    if fam == "mdi":
        return -(xi + 1.0)
    if fam == "mdi_a":
        return math.log(spec.a) - spec.a * (xi + 1.0)
    return -math.log1p((xi / spec.A) ** 2)


def log_prior_gp(scale, shape, spec: PriorSpec):
    """Unnormalized log prior density of (scale, shape); every family carries 1/scale."""
    scale = np.asarray(scale, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_prior_shape(shape, spec) - np.log(scale)
    return np.where(scale > 0, out, -np.inf)[()]


def log_prior_pu(p):
    """Log density of the beta(1/2, 1/2) prior for the exceedance probability."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -math.log(math.pi) - 0.5 * np.log(p) - 0.5 * np.log1p(-p)
    return np.where((p > 0) & (p < 1), out, -np.inf)[()]


def shape_tail_prob(spec: PriorSpec, x: float, method: str = "closed") -> float:
    """P(shape > x) under the normalized marginal prior of the shape parameter.

    ``method="closed"`` uses closed forms where available (mdi, mdi_a,
    cauchy); ``"quad"`` integrates the density numerically.
    """
    fam = spec.family
    if fam == "flat":
        raise ValueError("the flat prior is improper in the shape parameter")
    lower = SHAPE_LOWER[fam]
    if method == "closed" and fam in ("mdi", "mdi_a"):
        a = 1.0 if fam == "mdi" else spec.a
        return float(math.exp(-a * (max(x, lower) + 1.0)))
    if method == "closed" and fam == "cauchy":
        x = max(x, lower)
        A = spec.A
        return float((math.pi / 2 - math.atan(x / A)) / (math.pi / 2 + math.atan(1.0 / A)))
    if method not in ("closed", "quad"):
        raise ValueError(f"unknown method {method!r}")

    def dens(t):
        return float(np.exp(log_prior_shape(t, spec)))

    def integral(a, b):
        # split at 0 so each piece has at most one awkward endpoint
        return integrate.quad(dens, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)[0]

    x = max(x, lower)
    total = integral(lower, 0.0) + integral(0.0, np.inf)
    upper = integral(x, np.inf) if x >= 0 else integral(x, 0.0) + integral(0.0, np.inf)
    return upper / total


class Propriety(NamedTuple):
    ok: bool
    message: str


def propriety_check(spec: PriorSpec, n_exceed: int) -> Propriety:
    """Known sufficient conditions for a proper posterior given ``n_exceed`` excesses."""
    fam = spec.family
    if fam == "jeffreys":
        need = 1
    elif fam == "flat":
        need = 3
    else:
        # shape bounded below a priori: proper for any sample size
        return Propriety(True, f"{spec.label}: proper for any number of excesses")
    if n_exceed >= need:
        return Propriety(True, f"{spec.label}: proper with {n_exceed} >= {need} excesses")
    return Propriety(False, f"{spec.label}: posterior propriety needs at least {need} excesses, got {n_exceed}")


@dataclass(frozen=True)
class CalibrationInputs:
    m1_hat: float
    m100_hat: float
    m10000_hat: float
    tail_prob_target: float = 0.2

    def __post_init__(self):
        if not self.m1_hat < self.m100_hat < self.m10000_hat:
            raise ValueError("need m1_hat < m100_hat < m10000_hat")
        if not 0 < self.tail_prob_target < 1:
            raise ValueError("tail_prob_target must lie in (0, 1)")

    @property
    def ratio(self) -> float:
        return (self.m10000_hat - self.m1_hat) / (self.m100_hat - self.m1_hat)


def _median_growth(N, xi):
    # ((N / ln 2)^xi - 1) / xi, with its xi -> 0 limit
    lg = math.log(N / math.log(2.0))
    if abs(xi) < 1e-12:
        return lg
    return math.expm1(xi * lg) / xi


def median_ratio(xi: float) -> float:
    """(m_10000 - m_1) / (m_100 - m_1) for GEV N-year maxima medians with common shape ``xi``."""
    g1 = _median_growth(1.0, xi)
    return (_median_growth(1e4, xi) - g1) / (_median_growth(100.0, xi) - g1)


def calibrate_cauchy_scale(c: CalibrationInputs, bracket=(-0.9, 2.0), xtol: float = 1e-10):
    """Return ``(xi_star, A)``.

    ``xi_star`` solves median_ratio(xi) = c.ratio by bisection; ``A`` is the
    truncated-Cauchy scale giving P(shape > xi_star) = c.tail_prob_target.
    """
    target = c.ratio
    lo, hi = bracket
    f_lo, f_hi = median_ratio(lo) - target, median_ratio(hi) - target
    if f_lo * f_hi > 0:
        raise ValueError(
            f"ratio {target:.6g} has no root in shape bracket {bracket}: "
            f"R spans [{median_ratio(lo):.6g}, {median_ratio(hi):.6g}]"
        )
    xi_star = optimize.bisect(lambda x: median_ratio(x) - target, lo, hi, xtol=xtol, maxiter=500)

    def gap(log_A):
        return shape_tail_prob(PriorSpec("cauchy", A=math.exp(log_A)), xi_star) - c.tail_prob_target

    lo_A, hi_A = math.log(1e-8), math.log(1e8)
    if gap(lo_A) * gap(hi_A) > 0:
        raise ValueError(
            f"no Cauchy scale gives P(shape > {xi_star:.4g}) = {c.tail_prob_target}"
        )
    log_A = optimize.brentq(gap, lo_A, hi_A, xtol=1e-14)
    return float(xi_star), float(math.exp(log_A))


def warn_if_improper(spec: PriorSpec, n_exceed: int) -> None:
    check = propriety_check(spec, n_exceed)
    if not check.ok:
        warnings.warn(check.message, RuntimeWarning, stacklevel=2)

