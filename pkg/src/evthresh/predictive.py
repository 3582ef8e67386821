"""Predictive distributions of N-year maxima and predictive return levels.

A predictive distribution is a weighted mixture over training thresholds
of posterior averages of F(z; theta)^(n_y N).  A single threshold is the
one-component case.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .gp import BgpParams, Threshold, marginal_log_cdf, quantile
from .posterior import PosteriorSample

Z_CAP = 1e8
CURVE_POINTS = 200
CURVE_TOP = 0.9999


class NoFiniteRoot(ArithmeticError):
    """The predictive CDF levels off below the target probability."""

    def __init__(self, target: float, supremum: float, z: float):
        super().__init__(
            f"predictive probability never reaches {target:.10g}: it is {supremum:.10g} at z={z:.6g} "
            "(heavy-tailed posterior draws hold the distribution below the target)"
        )
        self.target = target
        self.supremum = supremum
        self.z = z


@dataclass(frozen=True)
class Horizon:
    N: float
    n_y: float

    def __post_init__(self):
        if not (self.N > 0 and self.n_y > 0) or self.N * self.n_y < 1:
            raise ValueError("need N > 0, n_y > 0 and n_y * N >= 1")

    @property
    def blocks(self) -> float:
        return self.N * self.n_y


@dataclass
class PredictiveCurve:
    horizon: Horizon
    z: np.ndarray
    prob: np.ndarray
    source: str

    def rows(self) -> list[dict]:
        return [{"z": float(a), "prob": float(b)} for a, b in zip(self.z, self.prob)]


def _cdf_one(z, blocks, threshold: Threshold, s: PosteriorSample, chunk=2_000_000):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(z < threshold.level):
        raise ValueError(f"the model at threshold {threshold.level:.6g} says nothing about lower levels")
    out = np.empty(z.size)
    step = max(1, chunk // max(s.m, 1))
    for i in range(0, z.size, step):
        zz = z[i:i + step, None]
        lF = marginal_log_cdf(zz, threshold.level, s.p_exceed[None, :], s.scale[None, :], s.shape[None, :])
        out[i:i + step] = np.exp(blocks * lF).mean(axis=1)
    return out


class Mixture:
    """Threshold-weighted mixture of posterior predictive distributions."""

    def __init__(self, thresholds: Sequence[Threshold], samples: Sequence[PosteriorSample], weights=None):
        if len(thresholds) != len(samples):
            raise ValueError("one posterior sample per threshold is needed")
        if weights is None:
            weights = np.ones(len(samples))
        w = np.asarray(weights, dtype=float)
        if w.size != len(samples):
            raise ValueError("one weight per threshold is needed")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be nonnegative and not all zero")
        self.thresholds = list(thresholds)
        self.samples = list(samples)
        self.weights = w / w.sum()

    @classmethod
    def single(cls, threshold: Threshold, sample: PosteriorSample) -> "Mixture":
        return cls([threshold], [sample], [1.0])

    @property
    def lower(self) -> float:
        """Smallest level at which every component is defined."""
        return max(t.level for t in self.thresholds)

    def cdf(self, z, blocks: float) -> np.ndarray:
        total = np.zeros(np.atleast_1d(z).size)
        for t, s, w in zip(self.thresholds, self.samples, self.weights):
            if w > 0:
                total += w * _cdf_one(z, blocks, t, s)
        return total

    def _initial_width(self, lo):
        sig, xi = [], []
        for t, s in zip(self.thresholds, self.samples):
            sv = s.scale + s.shape * (lo - t.level)
            sig.append(sv[sv > 0])
            xi.append(s.shape)
        sig = np.concatenate(sig)
        med_sig = float(np.median(sig)) if sig.size else 1.0
        med_xi = float(np.median(np.concatenate(xi)))
        return 10.0 * med_sig / max(abs(med_xi), 0.05)

    def solve(self, target: float, blocks: float, tol: float = 1e-8) -> float:
        """Level z with mixture CDF(z; blocks) = target."""
        lo = self.lower
        f_lo = self.cdf(lo, blocks)[0]
        if f_lo >= target:
            raise ValueError(
                f"probability {f_lo:.6g} at the threshold already reaches {target:.6g}; "
                "the root lies where the model is silent"
            )
        width = self._initial_width(lo)
        hi = lo + width
        f_hi = self.cdf(hi, blocks)[0]
        while f_hi < target:
            if hi - lo >= Z_CAP:
                raise NoFiniteRoot(target, float(f_hi), hi)
            width *= 2.0
            hi = lo + min(width, Z_CAP)
            f_hi = self.cdf(hi, blocks)[0]

        def g(z):
            return self.cdf(z, blocks)[0] - target

        root = optimize.brentq(g, lo, hi, xtol=1e-13 * max(1.0, abs(hi)), rtol=4 * np.finfo(float).eps,
                               maxiter=500)
        resid = abs(g(root))
        if resid >= tol:
            # flat stretches can leave brentq short; finish by bisection on the residual
            a, b = lo, hi
            for _ in range(200):
                mid = 0.5 * (a + b)
                gm = g(mid)
                if abs(gm) < tol:
                    return float(mid)
                a, b = (mid, b) if gm < 0 else (a, mid)
            raise ArithmeticError(f"root residual {resid:.3g} exceeds {tol:g}")
        return float(root)

    def return_level(self, N: float, n_y: float) -> float:
        """Predictive N-year return level: one-year CDF equal to 1 - 1/N."""
        if not N > 1:
            raise ValueError("return period N must exceed 1")
        return self.solve(1.0 - 1.0 / N, Horizon(1.0, n_y).blocks)

    def median(self, h: Horizon) -> float:
        return self.solve(0.5, h.blocks)

    def curve_grid(self, h: Horizon, n: int = CURVE_POINTS, top: float = CURVE_TOP) -> np.ndarray:
        """Log-spaced levels from the lowest common level up to the ``top`` quantile of M_N.

        Falls back to the 0.999 and 0.99 quantiles when the CDF never reaches ``top``.
        """
        lo = self.lower
        hi = None
        for p in (top, 0.999, 0.99):
            try:
                hi = self.solve(p, h.blocks)
                break
            except NoFiniteRoot:
                continue
        if hi is None:
            hi = lo + Z_CAP
        if lo > 0:
            z = np.geomspace(lo, hi, n)
        else:
            z = np.concatenate([[lo], lo + np.geomspace(1e-6 * (hi - lo), hi - lo, n - 1)])
        z[0] = lo
        return z

    def curve(self, h: Horizon, source: str, z=None, n: int = CURVE_POINTS) -> PredictiveCurve:
        """CDF of M_N on ``z`` (default :meth:`curve_grid`)."""
        z = self.curve_grid(h, n) if z is None else np.asarray(z, dtype=float)
        prob = np.maximum.accumulate(np.clip(self.cdf(z, h.blocks), 0.0, 1.0))
        return PredictiveCurve(h, z, prob, source)


def pred_cdf_mn(z, h: Horizon, u: Threshold, s: PosteriorSample):
    """Posterior-averaged P(M_N <= z) at one training threshold."""
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr <= u.level):
        raise ValueError("z must exceed the threshold")
    return _cdf_one(z_arr.ravel(), h.blocks, u, s).reshape(z_arr.shape)[()]


def predictive_return_level(h: Horizon, u: Threshold, s: PosteriorSample) -> float:
    """z_P(N): solves the posterior-averaged one-year CDF = 1 - 1/N."""
    return Mixture.single(u, s).return_level(h.N, h.n_y)


def averaged_pred_cdf(z, h: Horizon, thresholds, samples, weights):
    """Threshold-averaged P(M_N <= z): weight-averaged single-threshold predictive CDFs."""
    if not (len(thresholds) == len(samples) == len(weights)):
        raise ValueError("need one sample and one weight per threshold")
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr <= max(t.level for t in thresholds)):
        raise ValueError("z must exceed every threshold in the grid")
    mix = Mixture(thresholds, samples, weights)
    return mix.cdf(z_arr.ravel(), h.blocks).reshape(z_arr.shape)[()]


def averaged_return_level(h: Horizon, thresholds, samples, weights) -> float:
    """Threshold-averaged predictive N-year return level."""
    if not (len(thresholds) == len(samples) == len(weights)):
        raise ValueError("need one sample and one weight per threshold")
    return Mixture(thresholds, samples, weights).return_level(h.N, h.n_y)


def median_mn(h: Horizon, source: Mixture) -> float:
    """Median of the predictive distribution of M_N."""
    return source.median(h)


def estimative_return_level(h: Horizon, u: Threshold, th: BgpParams) -> float:
    """z(N) solving F(z; theta)^n_y = 1 - 1/N for fixed parameters."""
    if not h.N > 1:
        raise ValueError("return period N must exceed 1")
    # required survival probability per observation: 1 - (1 - 1/N)^(1/n_y)
    surv = -np.expm1(np.log1p(-1.0 / h.N) / h.n_y)
    ratio = surv / th.p_exceed
    if ratio >= 1:
        raise ValueError("the return level falls at or below the threshold")
    return float(u.level + quantile(1.0 - ratio, th.gp.scale, th.gp.shape))


def exceedance_count_probs(h: Horizon, u: Threshold, th: BgpParams, z: float | None = None,
                           max_count: int = 4) -> np.ndarray:
    """P(K = 0..max_count), K the number of the n_y*N observations exceeding z.

    ``z`` defaults to the estimative N-year return level.
    """
    if z is None:
        z = estimative_return_level(h, u, th)
    lF = float(marginal_log_cdf(z, u.level, th.p_exceed, th.gp.scale, th.gp.shape))
    p = -np.expm1(lF)
    n = int(round(h.blocks))
    return stats.binom.pmf(np.arange(max_count + 1), n, p)
