"""Posterior sampling for the binomial-GP model at a single threshold.

The exceedance probability has a conjugate beta posterior under the
beta(1/2, 1/2) prior.  The GP parameters (scale, shape) are sampled by
generalized ratio-of-uniforms (r = 1/2) after moving the posterior mode
to the origin.  Excesses are divided by their mean before sampling, a
linear change of the scale coordinate that leaves the draws' distribution
unchanged and makes the sampler exactly scale equivariant.
"""
from __future__ import annotations

import logging
import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .gp import XI_EPS, Threshold
from .priors import PriorSpec, log_prior_gp, log_prior_shape, log_prior_shape_scalar, propriety_check
from .rou import SamplerError, find_mode, rou_sample

log = logging.getLogger(__name__)

DEFAULT_M = 10_000
SIMULATION_M = 1_000

# keep the (candidates x excesses) work array below this many elements
_CHUNK_ELEMS = 4_000_000


@dataclass
class GpPosteriorDraws:
    scale: np.ndarray
    shape: np.ndarray
    mode: tuple[float, float]
    acceptance_rate: float


@dataclass
class PosteriorSample:
    """Joint posterior draws of (p_exceed, scale, shape) at one training threshold."""

    p_exceed: np.ndarray
    scale: np.ndarray
    shape: np.ndarray
    mode: tuple[float, float]
    acceptance_rate: float
    prior: PriorSpec
    threshold: Threshold
    seed: int | None = None
    n_obs: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.scale.size

    @property
    def draws(self) -> np.ndarray:
        return np.column_stack([self.p_exceed, self.scale, self.shape])

    @classmethod
    def degenerate(cls, p_exceed, scale, shape, threshold: Threshold, prior=None):
        """Single-atom 'posterior' at fixed parameter values; useful for estimative calculations."""
        arr = lambda v: np.atleast_1d(np.asarray(v, dtype=float))
        return cls(arr(p_exceed), arr(scale), arr(shape), (float(np.ravel(scale)[0]), float(np.ravel(shape)[0])),
                   1.0, prior or PriorSpec("flat"), threshold)


def _gp_loglik_rows(ys, sig, xi):
    """GP log-likelihood of excesses ``ys`` at each (sig[k], xi[k]); assumes all rows are in-support."""
    n = ys.size
    out = -n * np.log(sig)
    if n == 0:
        return out
    small = np.abs(xi) <= XI_EPS
    total = ys.sum()
    out = out - np.where(small, total / sig, 0.0)
    big = ~small
    if np.any(big):
        sb, xb = sig[big], xi[big]
        acc = np.empty(sb.size)
        step = max(1, _CHUNK_ELEMS // n)
        for i in range(0, sb.size, step):
            c = (xb[i:i + step] / sb[i:i + step])[:, None] * ys[None, :]
            acc[i:i + step] = np.log1p(c).sum(axis=1)
        out[big] -= (1.0 + 1.0 / xb) * acc
    return out


def gp_log_posterior_fn(excesses, spec: PriorSpec):
    """Vectorized log posterior density of (scale, shape) given GP excesses.

    The returned function maps a (k, 2) array of (scale, shape) rows to k
    values, -inf outside the support.
    """
    ys = np.asarray(excesses, dtype=float)
    ymax = ys.max() if ys.size else 0.0

    def lp(x):
        x = np.atleast_2d(x)
        sig, xi = x[:, 0], x[:, 1]
        out = np.full(sig.shape, -np.inf)
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (sig > 0) & np.isfinite(xi) & (1.0 + xi * ymax / np.where(sig > 0, sig, 1.0) > 0)
            lprior = np.where(ok, log_prior_shape(np.where(ok, xi, 0.0), spec), -np.inf)
        ok &= np.isfinite(lprior)
        if np.any(ok):
            with np.errstate(divide="ignore", invalid="ignore"):
                v = _gp_loglik_rows(ys, sig[ok], xi[ok]) + lprior[ok] - np.log(sig[ok])
            # rounding can land exactly on the support edge
            out[ok] = np.where(np.isnan(v) | (v == np.inf), -np.inf, v)
        return out

    return lp


def gp_log_posterior_point(excesses, spec: PriorSpec):
    """Scalar counterpart of :func:`gp_log_posterior_fn` for optimizer use."""
    ys = np.asarray(excesses, dtype=float)
    n = ys.size
    ymax = ys.max() if n else 0.0
    total = ys.sum()

    def lp(x):
        sig, xi = float(x[0]), float(x[1])
        if not sig > 0 or not 1.0 + xi * ymax / sig > 0:
            return -np.inf
        lprior = log_prior_shape_scalar(xi, spec)
        if lprior == -np.inf:
            return -np.inf
        ll = -(n + 1) * math.log(sig)
        if abs(xi) <= XI_EPS:
            ll -= total / sig
        else:
            with np.errstate(divide="ignore"):
                t = float(np.log1p(ys * (xi / sig)).sum())
            # rounding can land exactly on the support edge
            if not math.isfinite(t):
                return -np.inf
            ll -= (1.0 + 1.0 / xi) * t
        return ll + lprior

    return lp


def log_posterior_gp(scale, shape, excesses, spec: PriorSpec):
    """Unnormalized log posterior of GP (scale, shape): log-likelihood plus log prior."""
    sig, xi = np.broadcast_arrays(np.asarray(scale, dtype=float), np.asarray(shape, dtype=float))
    ys = np.asarray(excesses, dtype=float)
    if np.any(ys < 0):
        raise ValueError("excesses must be nonnegative")
    if ys.size == 0:
        return log_prior_gp(sig, xi, spec)
    flat = gp_log_posterior_fn(ys, spec)(np.column_stack([sig.ravel(), xi.ravel()]))
    return flat.reshape(sig.shape)[()]


def sample_pu(n: int, n_exceed: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from the beta(n_exceed + 1/2, n - n_exceed + 1/2) posterior of the exceedance probability."""
    if not 0 <= n_exceed <= n:
        raise ValueError("need 0 <= n_exceed <= n")
    return rng.beta(n_exceed + 0.5, n - n_exceed + 0.5, size=m)


def _starts(ys):
    mean, var = ys.mean(), ys.var()
    ymax = ys.max()
    ratio = mean * mean / var if var > 0 else 1.0
    sc0 = 0.5 * mean * (ratio + 1.0)
    xi0 = float(np.clip(0.5 * (1.0 - ratio), -0.5, 0.5))
    if 1 + xi0 * ymax / sc0 <= 0:
        sc0 = -1.5 * xi0 * ymax
    return [
        (np.log(sc0), xi0),
        (np.log(mean), 0.0),
        (np.log(sc0 * 1.5), xi0 - 0.15),
    ]


# mode and bounding box depend only on (standardized excesses, prior); leave-one-out refits and
# repeated seeds revisit the same excess sets
_SETUP_CACHE: OrderedDict = OrderedDict()
_SETUP_CACHE_SIZE = 512


def sample_gp_posterior(excesses, spec: PriorSpec, m: int, rng: np.random.Generator, *,
                        allow_improper: bool = False, target=None, **rou_kw) -> GpPosteriorDraws:
    """Ratio-of-uniforms sample from the posterior of GP (scale, shape).

    ``target`` replaces the GP posterior by an arbitrary vectorized log
    density over (scale, shape) rows; it exists so the sampler can be
    checked against densities with known moments.
    """
    ys = np.asarray(excesses, dtype=float)
    if target is not None:
        starts = [(0.0, 0.0), (1.0, 1.0)]
        mode, _ = find_mode(target, starts)
        res = rou_sample(target, mode, m, rng, **rou_kw)
        return GpPosteriorDraws(res.draws[:, 0], res.draws[:, 1], (float(mode[0]), float(mode[1])),
                                res.acceptance_rate)

    if ys.size == 0:
        raise SamplerError("no threshold excesses: the GP posterior has no mode under a 1/scale prior")
    check = propriety_check(spec, ys.size)
    if not check.ok:
        if not allow_improper:
            raise SamplerError(check.message + " (pass allow_improper=True to sample anyway)")
        warnings.warn(check.message, RuntimeWarning, stacklevel=2)

    s = ys.mean()
    if not s > 0:
        raise SamplerError("all excesses are zero")
    ys_std = ys / s
    lp = gp_log_posterior_fn(ys_std, spec)
    lp1 = gp_log_posterior_point(ys_std, spec)
    key = (ys_std.tobytes(), spec, tuple(sorted(rou_kw.items())))
    cached = _SETUP_CACHE.get(key)
    if cached is None:
        mode, _ = find_mode(lp, _starts(ys_std), to_natural=lambda z: (math.exp(min(z[0], 700.0)), z[1]),
                            point=lp1)
        box = None
    else:
        _SETUP_CACHE.move_to_end(key)
        mode, box = cached
    if spec.family == "jeffreys" and mode[1] < -0.5 + 1e-3:
        warnings.warn(
            f"posterior mode at shape={mode[1]:.4f} is within 1e-3 of the Jeffreys boundary -1/2; "
            "the posterior is likely bimodal and unbounded there",
            RuntimeWarning, stacklevel=2,
        )
    n = ys.size
    guess = np.array([mode[0] * 1.5 / np.sqrt(n), (1.0 + abs(mode[1])) / np.sqrt(n)])
    try:
        res = rou_sample(lp, mode, m, rng, scale_guess=guess, point=lp1, box=box, **rou_kw)
    except SamplerError as exc:
        raise SamplerError(f"{exc} [n_excess={n}, prior={spec.label}, mode=({mode[0] * s:.4g}, {mode[1]:.4g})]") from exc
    if cached is None:
        _SETUP_CACHE[key] = (mode, res.box)
        if len(_SETUP_CACHE) > _SETUP_CACHE_SIZE:
            _SETUP_CACHE.popitem(last=False)
    return GpPosteriorDraws(res.draws[:, 0] * s, res.draws[:, 1].copy(),
                            (float(mode[0] * s), float(mode[1])), res.acceptance_rate)


def sample_posterior(data, threshold: Threshold, spec: PriorSpec, m: int = DEFAULT_M,
                     rng: np.random.Generator | int | None = None, **kw) -> PosteriorSample:
    """Joint BGP posterior sample at ``threshold`` given raw (unthresholded) data."""
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
    elif isinstance(rng, np.random.SeedSequence):
        seed = int(rng.entropy) if isinstance(rng.entropy, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    x = np.asarray(data, dtype=float)
    exc = x[x > threshold.level] - threshold.level
    gp_draws = sample_gp_posterior(exc, spec, m, rng, **kw)
    p = sample_pu(x.size, exc.size, m, rng)
    return PosteriorSample(p, gp_draws.scale, gp_draws.shape, gp_draws.mode, gp_draws.acceptance_rate,
                           spec, threshold, seed, int(x.size))


_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


def posterior_summaries(s: PosteriorSample) -> dict:
    """Per-parameter summary statistics of a posterior sample, plus shape tail probabilities."""
    if s.m < 2:
        raise ValueError("need at least two draws")
    out = {}
    for name, arr in (("p_exceed", s.p_exceed), ("scale", s.scale), ("shape", s.shape)):
        qs = np.quantile(arr, _QUANTILES)
        out[name] = {
            "mean": float(arr.mean()),
            "sd": float(arr.std(ddof=1)),
            **{f"q{100 * q:g}": float(v) for q, v in zip(_QUANTILES, qs)},
        }
    out["prob_shape_gt_0"] = float(np.mean(s.shape > 0))
    out["prob_shape_gt_0.5"] = float(np.mean(s.shape > 0.5))
    out["prob_shape_gt_1"] = float(np.mean(s.shape > 1))
    out["mode"] = {"scale": s.mode[0], "shape": s.mode[1]}
    out["acceptance_rate"] = s.acceptance_rate
    out["m"] = s.m
    return out
