"""Generalized ratio-of-uniforms rejection sampling with the mode moved to the origin.

For a d-dimensional density f and tuning constant r > 0, if (u, v) is
uniform on {0 < u <= f(v / u**r) ** (1 / (r*d + 1))} then x = v / u**r
has density proportional to f.  The region is enclosed in the box

    0 < u <= a,    b_minus[i] <= v[i] <= b_plus[i],

with a = sup f^(1/(rd+1)) and b_{+/-}[i] = sup/inf x[i] f(x)^(r/(rd+1)).
All work is done with log densities normalized to zero at the mode.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

LogDensity = Callable[[np.ndarray], np.ndarray]


class SamplerError(RuntimeError):
    """Raised when the ratio-of-uniforms sampler breaks down."""


@dataclass
class RouBox:
    log_a: float
    b_minus: np.ndarray
    b_plus: np.ndarray
    r: float

    @property
    def volume_log(self) -> float:
        return self.log_a + float(np.sum(np.log(self.b_plus - self.b_minus)))


@dataclass
class RouResult:
    draws: np.ndarray
    mode: np.ndarray
    acceptance_rate: float
    n_trials: int
    box: RouBox


def _nm(fun, x0, xatol=1e-7, fatol=1e-10, maxiter=2000):
    return optimize.minimize(fun, np.asarray(x0, dtype=float), method="Nelder-Mead",
                             options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter,
                                      "adaptive": len(x0) > 2})


def _pointwise(log_density: LogDensity, point=None):
    if point is not None:
        return point
    return lambda x: float(log_density(np.atleast_2d(x))[0])


def find_mode(log_density: LogDensity, starts, to_natural=None, point=None) -> tuple[np.ndarray, float]:
    """Maximize ``log_density`` by Nelder-Mead from each start; return (mode, log density there).

    ``to_natural`` maps the search coordinates to the density's own
    coordinates (e.g. exp on a log-scale parameter).  The density is always
    evaluated in its own coordinates, so the maximizer is the mode there.
    ``point`` is an optional fast scalar version of ``log_density``.
    """
    conv = to_natural or (lambda z: z)
    f1 = _pointwise(log_density, point)

    def nlp(z):
        val = f1(conv(np.asarray(z)))
        return -val if np.isfinite(val) else np.inf

    best = None
    for s in starts:
        if not np.isfinite(nlp(s)):
            continue
        res = _nm(nlp, s, xatol=1e-8, fatol=1e-11)
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise SamplerError("mode search failed: density is -inf at every starting point")
    # restart once from the end point to escape premature simplex collapse
    res = _nm(nlp, best.x, xatol=1e-10, fatol=1e-13)
    if res.fun < best.fun:
        best = res
    return np.asarray(conv(best.x), dtype=float), float(-best.fun)


def _hessian_cov(logf, d, scale_guess):
    """Covariance of the Gaussian approximation at the origin, or None if unusable."""
    h = 1e-3 * scale_guess
    H = np.empty((d, d))
    pts = []
    for i in range(d):
        for j in range(d):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                e = np.zeros(d)
                e[i] += si * h[i]
                e[j] += sj * h[j]
                pts.append(e)
    vals = logf(np.array(pts)).reshape(d, d, 4)
    if not np.all(np.isfinite(vals)):
        return None
    for i in range(d):
        for j in range(d):
            pp, pm, mp, mm = vals[i, j]
            H[i, j] = (pp - pm - mp + mm) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(-H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    return cov


def _scan_start(obj, d, scale):
    """Best feasible point of ``obj`` over a fixed set of directions and radii, or None."""
    dirs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=d)))
    dirs = dirs[np.any(dirs != 0, axis=1)]
    best, best_val = None, np.inf
    for rad in (1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0):
        for e in dirs:
            x = rad * e * scale
            val = obj(x)
            if val < best_val:
                best, best_val = x, val
    return best


def rou_box(logf: LogDensity, d: int, r: float = 0.5, scale_guess=None,
            inflate: float = 1.01, point=None) -> RouBox:
    """Bounding box for the ratio-of-uniforms region of ``logf`` (mode at the origin, logf(0) = 0)."""
    k_u = 1.0 / (r * d + 1.0)
    k_v = r * k_u
    scale_guess = np.ones(d) if scale_guess is None else np.asarray(scale_guess, dtype=float)
    cov = _hessian_cov(logf, d, scale_guess)
    if cov is None:
        cov = np.diag(scale_guess ** 2)

    f1 = _pointwise(logf, point)

    def neg_lf(x):
        val = f1(x)
        return -val if np.isfinite(val) else np.inf

    # the supplied mode may be marginally off the true maximum
    lf_max = max(0.0, -float(_nm(neg_lf, np.zeros(d)).fun))
    log_a = k_u * lf_max + np.log(inflate)

    b_minus = np.empty(d)
    b_plus = np.empty(d)
    for i in range(d):
        direction = cov[:, i] / np.sqrt(cov[i, i])
        for sign in (1.0, -1.0):
            def obj(x, i=i, sign=sign):
                xi = sign * x[i]
                if xi <= 0:
                    return np.inf
                lf = f1(x)
                if not np.isfinite(lf):
                    return np.inf
                return -(np.log(xi) + k_v * lf)

            best = None
            # for a Gaussian the optimum is k_v**-0.5 sd along cov[:, i] (2 sd when r = 1/2)
            for mult in (k_v ** -0.5, 2.0 * k_v ** -0.5):
                x0 = sign * mult * direction
                if not np.isfinite(obj(x0)):
                    x0 = x0 * 0.1
                    if not np.isfinite(obj(x0)):
                        continue
                res = _nm(obj, x0, xatol=1e-6, fatol=1e-8)
                if best is None or res.fun < best.fun:
                    best = res
            if best is None:
                # mode on a support corner: the Gaussian directions leave the support
                x0 = _scan_start(obj, d, scale_guess)
                if x0 is None:
                    # nothing feasible on this side of the mode: the region ends at v_i = 0
                    if sign > 0:
                        b_plus[i] = 0.0
                    else:
                        b_minus[i] = 0.0
                    continue
                best = _nm(obj, x0, xatol=1e-6, fatol=1e-8)
            if not np.isfinite(best.fun) or np.max(np.abs(best.x)) > 1e8 * (1 + scale_guess.max()):
                raise SamplerError(
                    f"ratio-of-uniforms box appears unbounded in coordinate {i} "
                    f"(optimizer reached x={best.x})"
                )
            bound = np.exp(-best.fun) * inflate
            if sign > 0:
                b_plus[i] = bound
            else:
                b_minus[i] = -bound
    return RouBox(float(log_a), b_minus, b_plus, r)


def rou_sample(log_density: LogDensity, mode, m: int, rng: np.random.Generator, *,
               r: float = 0.5, scale_guess=None, inflate: float = 1.01,
               min_acceptance: float = 1e-4, max_batch: int = 2_000_000, point=None,
               box: RouBox | None = None) -> RouResult:
    """Draw ``m`` variates from the density exp(log_density) by generalized ratio-of-uniforms.

    ``log_density`` maps a (k, d) array to k log densities (-inf outside the
    support); ``point`` is an optional scalar version used by the
    optimizers.  ``mode`` is relocated to the origin before the box is built.
    A ``box`` from an earlier call with the same density and mode skips the
    box optimization.  Draws are a deterministic function of the generator state.
    """
    mode = np.asarray(mode, dtype=float)
    d = mode.size
    lf0 = float(log_density(mode[None, :])[0])
    if not np.isfinite(lf0):
        raise SamplerError(f"log density is not finite at the supplied mode {mode}")

    def logf(x):
        return log_density(np.asarray(x) + mode) - lf0

    f1 = None
    if point is not None:
        def f1(x):
            return point(np.asarray(x) + mode) - lf0

    if box is None:
        box = rou_box(logf, d, r=r, scale_guess=scale_guess, inflate=inflate, point=f1)
    k_u = 1.0 / (r * d + 1.0)
    width = box.b_plus - box.b_minus
    a = np.exp(box.log_a)

    out = []
    n_acc = 0
    trials = 0
    rate = 0.3
    while n_acc < m:
        k = int(min(max((m - n_acc) / max(rate, min_acceptance) * 1.15 + 64, 256), max_batch))
        u = a * (1.0 - rng.uniform(size=k))  # in (0, a]
        v = box.b_minus + width * rng.uniform(size=(k, d))
        x = v / u[:, None] ** r
        lf = logf(x)
        acc = np.log(u) / k_u <= lf
        got = x[acc]
        out.append(got)
        n_acc += got.shape[0]
        trials += k
        rate = n_acc / trials
        if trials >= 50_000 and rate < min_acceptance:
            raise SamplerError(
                f"acceptance rate {rate:.2e} fell below {min_acceptance:g} after {trials} trials; "
                "the target may be unbounded or have very heavy tails"
            )
    draws = np.concatenate(out)[:m] + mode
    return RouResult(draws, mode, float(rate), int(trials), box)
