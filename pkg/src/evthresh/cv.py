"""Leave-one-out cross-validation of training thresholds and the resulting threshold weights.

For each training threshold u the BGP posterior is sampled once from the
full data.  Leave-one-out predictive densities at the validation
threshold v are then estimated by importance sampling with weights
1 / f_u(x_r | theta), except for the fold that removes the (unique) sample
maximum: that fold changes the posterior support, so it gets its own
posterior sample and a plain Monte Carlo average.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .gp import Threshold, implied_log_params, log_obs_density, logpdf
from .posterior import SIMULATION_M, PosteriorSample, sample_posterior
from .priors import PriorSpec

log = logging.getLogger(__name__)

LOW_ESS_FRACTION = 0.05


@dataclass(frozen=True)
class CvConfig:
    training_quantiles: tuple[float, ...]
    m: int = SIMULATION_M
    prior: PriorSpec = field(default_factory=PriorSpec)
    threshold_prior: tuple[float, ...] | None = None

    def __post_init__(self):
        q = np.asarray(self.training_quantiles, dtype=float)
        object.__setattr__(self, "training_quantiles", tuple(float(v) for v in q))
        if q.size == 0 or np.any(np.diff(q) <= 0) or q[0] < 0 or q[-1] >= 1:
            raise ValueError("training quantiles must be strictly increasing within [0, 1)")
        if self.threshold_prior is not None:
            tp = np.asarray(self.threshold_prior, dtype=float)
            if tp.size != q.size or np.any(tp < 0) or abs(tp.sum() - 1) > 1e-9:
                raise ValueError("threshold_prior must be a probability vector, one entry per threshold")
            object.__setattr__(self, "threshold_prior", tuple(float(v) for v in tp))

    @property
    def validation_quantile(self) -> float:
        return self.training_quantiles[-1]

    @property
    def k(self) -> int:
        return len(self.training_quantiles)

    def prior_probs(self) -> np.ndarray:
        if self.threshold_prior is None:
            return np.full(self.k, 1.0 / self.k)
        return np.asarray(self.threshold_prior)


def log_f_validation(x, v, p_u, scale, shape, u):
    """log f_v(x | theta) for BGP parameters given at threshold ``u`` (vectorized over x and draws).

    Where the implied exceedance probability at v is zero this is log I(x <= v).
    """
    if np.any(np.asarray(v) < np.asarray(u)):
        raise ValueError("validation threshold must not be below the training threshold")
    with np.errstate(divide="ignore"):
        log_pv, scale_v = implied_log_params(np.log(p_u), scale, shape, v - u)
    x = np.asarray(x, dtype=float)
    pv = np.exp(log_pv)
    above = x > v
    safe_scale = np.where(pv > 0, scale_v, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        below_part = np.log1p(-pv)
        above_part = np.where(pv > 0, log_pv + logpdf(np.where(above, x - v, 0.0), safe_scale, shape), -np.inf)
    return np.where(above, above_part, below_part)


def _naive_fold_index(x_sorted: np.ndarray, level: float) -> int | None:
    """Index (in sorted order) of the fold that changes the posterior support, if any."""
    n = x_sorted.size
    if n < 2 or x_sorted[-1] <= level or x_sorted[-1] == x_sorted[-2]:
        return None
    return n - 1


@dataclass
class ThresholdFit:
    """Posterior samples needed to cross-validate one training threshold."""

    threshold: Threshold
    sample: PosteriorSample
    sample_drop_max: PosteriorSample | None


def fit_threshold(data, threshold: Threshold, prior: PriorSpec, m: int,
                  rng: np.random.Generator | int | None = None, **kw) -> ThresholdFit:
    """Sample the full-data posterior, plus the posterior without the maximum when that fold needs it."""
    x = np.sort(np.asarray(data, dtype=float))
    if isinstance(rng, np.random.Generator):
        g_full = g_drop = rng
    else:
        ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
        g_full, g_drop = ss.spawn(2)
    sample = sample_posterior(x, threshold, prior, m, g_full, **kw)
    drop = None
    if _naive_fold_index(x, threshold.level) is not None:
        drop = sample_posterior(x[:-1], threshold, prior, m, g_drop, **kw)
    return ThresholdFit(threshold, sample, drop)


@dataclass
class FoldResult:
    log_density: np.ndarray   # per observation, input order
    ess: np.ndarray           # importance-sampling ESS per fold (nan for the refit fold)
    naive: np.ndarray         # True where the fold used a separate posterior

    @property
    def t_hat(self) -> float:
        return float(np.sum(self.log_density))


def loo_is_log_densities(x, level: float, v: float, s: PosteriorSample):
    """Importance-sampling estimates of log f_v(x_r | x_(r), u) for every x_r, with per-fold ESS.

    Valid only for folds whose removal leaves the posterior support unchanged.
    """
    x = np.asarray(x, dtype=float)
    p, sig, xi = s.p_exceed, s.scale, s.shape
    out = np.empty(x.size)
    ess = np.empty(x.size)

    def estimate(lfu, lfv):
        if not np.all(np.isfinite(lfu)):
            raise FloatingPointError("f_u(x_r | theta_j) vanished for a posterior draw; "
                                     "the importance weights are undefined")
        lw = -lfu
        lden = logsumexp(lw, axis=-1)
        lnum = logsumexp(lfv + lw, axis=-1)
        lwn = lw - lden[..., None]
        return lnum - lden, np.exp(-logsumexp(2.0 * lwn, axis=-1))

    below = x <= level
    if np.any(below):
        # every fold at or below u has the same estimate
        lfu = np.log1p(-p)
        lfv = log_f_validation(level, v, p, sig, xi, level)
        est, e = estimate(lfu[None, :], lfv[None, :])
        out[below], ess[below] = est[0], e[0]
    idx = np.flatnonzero(~below)
    if idx.size:
        xa = x[idx][:, None]
        lfu = log_obs_density(xa, level, p[None, :], sig[None, :], xi[None, :])
        lfv = log_f_validation(xa, v, p[None, :], sig[None, :], xi[None, :], level)
        out[idx], ess[idx] = estimate(lfu, lfv)
    return out, ess


def naive_log_density(x_r: float, level: float, v: float, s: PosteriorSample) -> float:
    """log of the plain Monte Carlo average of f_v(x_r | theta) over a leave-one-out posterior sample."""
    lfv = log_f_validation(x_r, v, s.p_exceed, s.scale, s.shape, level)
    return float(logsumexp(lfv) - np.log(lfv.size))


def loo_log_densities(data, fit: ThresholdFit, v: float) -> FoldResult:
    """All n leave-one-out log predictive densities for one training threshold."""
    x = np.asarray(data, dtype=float)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    level = fit.threshold.level
    est, ess = loo_is_log_densities(xs, level, v, fit.sample)
    naive = np.zeros(xs.size, dtype=bool)
    j = _naive_fold_index(xs, level)
    if j is not None:
        if fit.sample_drop_max is None:
            raise ValueError("the fold removing the sample maximum needs a separate posterior sample")
        est[j] = naive_log_density(xs[j], level, v, fit.sample_drop_max)
        ess[j] = np.nan
        naive[j] = True
    res = FoldResult(np.empty_like(est), np.empty_like(ess), np.empty_like(naive))
    res.log_density[order], res.ess[order], res.naive[order] = est, ess, naive
    bad = np.flatnonzero(~np.isfinite(res.log_density))
    if bad.size:
        log.warning("threshold %.6g: %d folds have zero predictive density (first indices %s)",
                    level, bad.size, bad[:5].tolist())
    return res


def loo_predictive_density_is(r: int, data, u: Threshold, v: float, s: PosteriorSample) -> float:
    """Importance-sampling estimate of f_v(x_r | x_(r), u) from a full-data posterior sample.

    ``r`` indexes ``data`` as given; it must not be the fold that removes
    the unique sample maximum.
    """
    x = np.sort(np.asarray(data, dtype=float))
    xr = float(np.asarray(data, dtype=float)[r])
    j = _naive_fold_index(x, u.level)
    if j is not None and xr == x[j]:
        raise ValueError("importance sampling is invalid for the fold removing the sample maximum")
    est, _ = loo_is_log_densities(np.array([xr]), u.level, v, s)
    return float(np.exp(est[0]))


def loo_predictive_density_naive(r: int, data, u: Threshold, v: float, cfg: CvConfig,
                                 rng: np.random.Generator | int | None = None) -> float:
    """Plain Monte Carlo estimate of f_v(x_r | x_(r), u) from a posterior refitted without x_r."""
    x = np.asarray(data, dtype=float)
    rest = np.delete(x, r)
    s = sample_posterior(rest, u, cfg.prior, cfg.m, rng)
    return float(np.exp(naive_log_density(x[r], u.level, v, s)))


def threshold_measure(data, u: Threshold, cfg: CvConfig, rng=None, v: float | None = None) -> float:
    """Sum over folds of log leave-one-out predictive densities at validation threshold v."""
    x = np.asarray(data, dtype=float)
    if v is None:
        v = float(np.quantile(x, cfg.validation_quantile))
    fit = fit_threshold(x, u, cfg.prior, cfg.m, rng)
    return loo_log_densities(x, fit, v).t_hat


def threshold_weights(t_hats, prior=None) -> np.ndarray:
    """Normalized exp(T_hat_i) * P(u_i)."""
    t = np.asarray(t_hats, dtype=float)
    pr = np.full(t.size, 1.0 / t.size) if prior is None else np.asarray(prior, dtype=float)
    if pr.size != t.size:
        raise ValueError("one prior probability per threshold is needed")
    with np.errstate(divide="ignore"):
        lw = t + np.log(pr)
    if not np.any(np.isfinite(lw)):
        raise ValueError("every threshold has T_hat = -inf (or zero prior mass); weights are undefined")
    w = np.exp(lw - np.max(lw))
    return w / w.sum()


def pseudo_bayes_factors(t_hats) -> np.ndarray:
    """Matrix of exp(T_hat_i - T_hat_j)."""
    t = np.asarray(t_hats, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        return np.exp(t[:, None] - t[None, :])


@dataclass
class ThresholdRecord:
    threshold: Threshold
    t_hat: float
    weight: float
    ess_min: float
    n_low_ess: int

    @property
    def n_exceed(self) -> int:
        return self.threshold.n_exceed


@dataclass
class CvReport:
    records: list[ThresholdRecord]
    validation: Threshold
    pseudo_bayes_factors: np.ndarray
    threshold_prior: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records])

    @property
    def t_hats(self) -> np.ndarray:
        return np.array([r.t_hat for r in self.records])

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.t_hats))

    def rows(self) -> list[dict]:
        return [
            {
                "quantile": r.threshold.quantile_prob,
                "level": r.threshold.level,
                "n_exceed": r.threshold.n_exceed,
                "T_hat": r.t_hat,
                "weight": r.weight,
            }
            for r in self.records
        ]

    def to_dict(self) -> dict:
        return {
            "validation": {"quantile": self.validation.quantile_prob, "level": self.validation.level,
                           "n_exceed": self.validation.n_exceed},
            "thresholds": [
                {**row, "ess_min": rec.ess_min, "n_low_ess": rec.n_low_ess}
                for row, rec in zip(self.rows(), self.records)
            ],
            "threshold_prior": self.threshold_prior.tolist(),
            "pseudo_bayes_factors": self.pseudo_bayes_factors.tolist(),
            "diagnostics": self.diagnostics,
        }


def build_report(data, fits: list[ThresholdFit], validation: Threshold, prior_probs=None) -> CvReport:
    """Threshold scores and weights for fits sharing one validation threshold."""
    x = np.asarray(data, dtype=float)
    k = len(fits)
    prior_probs = np.full(k, 1.0 / k) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    folds = [loo_log_densities(x, f, validation.level) for f in fits]
    t_hats = np.array([fr.t_hat for fr in folds])
    w = threshold_weights(t_hats, prior_probs)
    records = []
    for f, fr, t, wi in zip(fits, folds, t_hats, w):
        ess_is = fr.ess[~fr.naive]
        low = int(np.count_nonzero(ess_is < LOW_ESS_FRACTION * f.sample.m))
        records.append(ThresholdRecord(f.threshold, float(t), float(wi),
                                       float(np.min(ess_is)) if ess_is.size else float("nan"), low))
    diag = {
        "ess_min": float(np.nanmin([r.ess_min for r in records])),
        "folds_low_ess": int(sum(r.n_low_ess for r in records)),
        "r_eq_n_resampled": bool(any(fr.naive.any() for fr in folds)),
    }
    return CvReport(records, validation, pseudo_bayes_factors(t_hats), prior_probs, diag)


def fit_grid(data, cfg: CvConfig, seed=None, **kw) -> list[ThresholdFit]:
    """Fit every training threshold of ``cfg`` with independent child seeds of ``seed``."""
    x = np.asarray(data, dtype=float)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(cfg.k)
    fits = []
    for q, child in zip(cfg.training_quantiles, children):
        thr = Threshold.from_quantile(x, q)
        fits.append(fit_threshold(x, thr, cfg.prior, cfg.m, child, **kw))
    return fits


def cross_validate(data, cfg: CvConfig, seed=None, **kw) -> tuple[CvReport, list[ThresholdFit]]:
    """Fit all training thresholds and score them at v = highest training threshold."""
    x = np.asarray(data, dtype=float)
    fits = fit_grid(x, cfg, seed, **kw)
    report = build_report(x, fits, fits[-1].threshold, cfg.prior_probs())
    return report, fits


def truncation_sweep(data, fits: list[ThresholdFit], prior_probs=None) -> list[CvReport]:
    """Reports for each truncated grid u_1..u_j (j = 1..k), validating at v = u_j.

    Posterior samples depend only on the training threshold, so they are reused.
    """
    out = []
    for j in range(1, len(fits) + 1):
        pp = None
        if prior_probs is not None:
            pp = np.asarray(prior_probs[:j], dtype=float)
            pp = pp / pp.sum()
        out.append(build_report(data, fits[:j], fits[j - 1].threshold, pp))
    return out
