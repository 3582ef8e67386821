"""Simulation studies: prior calibration of predictive distributions of N-year maxima,
and single-threshold versus threshold-averaged inference on known models.

Repetition i of a study uses child i of ``SeedSequence(seed)``, so results
are reproducible and independent of how many repetitions run.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .cv import CvConfig, cross_validate
from .gp import GpParams, Threshold, fit_gp_mle, logsf, marginal_log_cdf, quantile
from .posterior import SIMULATION_M, PosteriorSample, sample_gp_posterior, sample_pu
from .predictive import Horizon, Mixture
from .priors import PriorSpec
from .rou import SamplerError

log = logging.getLogger(__name__)

BELOW_THRESHOLD = -math.inf  # M_N when no observation exceeds the threshold


# --- models -------------------------------------------------------------------

@dataclass(frozen=True)
class SimModel:
    """A known distribution H to simulate from.

    ``isf`` is the inverse survival function; it keeps precision for the
    upper-tail probabilities needed by N-year maxima.
    """

    kind: str
    true_cdf: Callable[[np.ndarray], np.ndarray]
    true_quantile: Callable[[np.ndarray], np.ndarray]
    isf: Callable[[np.ndarray], np.ndarray]
    sample: Callable[[int, np.random.Generator], np.ndarray]
    params: dict = field(default_factory=dict)

    def median_mn(self, h: Horizon) -> float:
        """True median of the maximum of n_y*N independent draws: H^-1((1/2)^(1/(n_y N)))."""
        surv = -math.expm1(math.log(0.5) / h.blocks)
        return float(self.isf(surv))


def exponential_model() -> SimModel:
    return SimModel(
        "exponential",
        lambda x: -np.expm1(-np.maximum(np.asarray(x, dtype=float), 0.0)),
        lambda q: -np.log1p(-np.asarray(q, dtype=float)),
        lambda s: -np.log(np.asarray(s, dtype=float)),
        lambda n, rng: rng.standard_exponential(n),
    )


def normal_model() -> SimModel:
    return SimModel("normal", stats.norm.cdf, stats.norm.ppf, stats.norm.isf,
                    lambda n, rng: rng.standard_normal(n))


def hybrid_model(xi_tail: float = 0.1) -> SimModel:
    """Uniform density on [0, 1] carrying mass 0.75, GP(1/3, xi_tail) excesses of 1 carrying 0.25.

    The GP scale 1/3 makes the density continuous at the 75% quantile.
    """
    if not xi_tail > -1:
        raise ValueError("xi_tail must exceed -1")
    q75, upper_mass = 1.0, 0.25
    sig = upper_mass * q75 / 0.75

    def cdf(x):
        x = np.asarray(x, dtype=float)
        body = 0.75 * np.clip(x, 0.0, q75) / q75
        tail = upper_mass * -np.expm1(logsf(np.maximum(x - q75, 0.0), sig, xi_tail))
        return np.where(x <= q75, body, 0.75 + tail)

    def ppf(q):
        q = np.asarray(q, dtype=float)
        tail_q = np.clip((q - 0.75) / upper_mass, 0.0, 1.0)
        return np.where(q <= 0.75, q / 0.75 * q75, q75 + quantile(tail_q, sig, xi_tail))

    def isf(s):
        s = np.asarray(s, dtype=float)
        tail_s = np.clip(s / upper_mass, 0.0, 1.0)
        # GP quantile written in survival form for small s
        small = abs(xi_tail) <= 1e-6
        y = -sig * np.log(tail_s) if small else sig * np.expm1(-xi_tail * np.log(tail_s)) / xi_tail
        return np.where(s >= upper_mass, (1.0 - s) / 0.75 * q75, q75 + y)

    return SimModel("uniform_gp_hybrid", cdf, ppf, isf, lambda n, rng: ppf(rng.uniform(size=n)),
                    {"xi_tail": xi_tail, "q75": q75, "tail_scale": sig})


def bgp_model(p_u: float, gp: GpParams, level: float = 0.0) -> SimModel:
    """BGP model above ``level``; only levels at or above the threshold are described."""

    def cdf(z):
        z = np.asarray(z, dtype=float)
        if np.any(z < level):
            raise ValueError("the BGP model describes only levels at or above the threshold")
        return np.exp(marginal_log_cdf(z, level, p_u, gp.scale, gp.shape))

    def isf(s):
        s = np.asarray(s, dtype=float)
        if np.any(s > p_u):
            raise ValueError("survival probability above p_u lies below the threshold")
        return level + quantile(1.0 - s / p_u, gp.scale, gp.shape)

    def sample(n, rng):
        n_u, exc = simulate_bgp_dataset(n, p_u, gp, rng)
        return np.concatenate([np.full(n - n_u, level), level + exc])

    return SimModel("bgp", cdf, lambda q: isf(1.0 - np.asarray(q, dtype=float)), isf, sample,
                    {"p_u": p_u, "scale": gp.scale, "shape": gp.shape})


def model_by_name(name: str, xi_tail: float = 0.1) -> SimModel:
    if name == "exponential":
        return exponential_model()
    if name == "normal":
        return normal_model()
    if name in ("hybrid", "uniform_gp_hybrid"):
        return hybrid_model(xi_tail)
    raise ValueError(f"unknown model {name!r}")


# --- simulation primitives ----------------------------------------------------

def simulate_bgp_dataset(n: int, p_u: float, gp: GpParams, rng: np.random.Generator):
    """(n_exceed, excesses) of n BGP observations; values below the threshold are not generated."""
    n_u = int(rng.binomial(n, p_u))
    return n_u, quantile(rng.uniform(size=n_u), gp.scale, gp.shape)


def _gp_isf(s, scale, shape):
    s = np.asarray(s, dtype=float)
    if abs(shape) <= 1e-6:
        return -scale * np.log(s)
    return scale * np.expm1(-shape * np.log(s)) / shape


def simulate_mn(h: Horizon, p_u: float, gp: GpParams, rng: np.random.Generator, size: int | None = None):
    """Maximum excess over n_y*N BGP observations, or ``BELOW_THRESHOLD`` when none exceed.

    The maximum of k GP draws is generated by inversion of G^k.
    """
    n_draw = 1 if size is None else size
    k = rng.binomial(int(round(h.blocks)), p_u, size=n_draw)
    uu = rng.uniform(size=n_draw)
    with np.errstate(divide="ignore"):
        surv = -np.expm1(np.log(uu) / np.maximum(k, 1))
    out = np.where(k > 0, _gp_isf(np.maximum(surv, 1e-300), gp.scale, gp.shape), BELOW_THRESHOLD)
    return float(out[0]) if size is None else out


def _pred_prob(z, blocks, p, scale, shape):
    # z is an excess over the threshold; the sentinel is scored as P(M_N <= threshold)
    z = max(z, 0.0)
    lF = marginal_log_cdf(z, 0.0, p, scale, shape)
    return float(np.mean(np.exp(blocks * lF)))


# --- study 1 ------------------------------------------------------------------

@dataclass(frozen=True)
class Study1Config:
    """One arm of the calibration study.

    ``arm`` is a PriorSpec (predictive arm), "mle" (estimative arm) or
    "control" (scores genuine U(0, 1) draws).
    """

    arm: PriorSpec | str = field(default_factory=lambda: PriorSpec("mdi"))
    n: int = 500
    n_y: float = 10.0
    p_u: float = 0.5
    gp: GpParams = GpParams(1.0, 0.1)
    horizons: tuple[float, ...] = (100.0, 1000.0, 10000.0, 100000.0)
    reps: int = 1000
    m: int = SIMULATION_M
    seed: int = 0

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if isinstance(self.arm, str) and self.arm not in ("mle", "control"):
            raise ValueError("arm must be a PriorSpec, 'mle' or 'control'")

    @property
    def arm_label(self) -> str:
        return self.arm if isinstance(self.arm, str) else self.arm.label


@dataclass
class DecileReport:
    proportions: np.ndarray
    tolerance_band: tuple[float, float]
    pass_flags: np.ndarray
    n_scored: int = 0
    n_failed: int = 0
    label: str = ""

    @classmethod
    def from_values(cls, values, n_failed: int = 0, label: str = "") -> "DecileReport":
        u = np.asarray(values, dtype=float)
        if u.size == 0:
            raise ValueError("no values to bin")
        idx = np.minimum((u * 10).astype(int), 9)
        props = np.bincount(idx, minlength=10) / u.size
        half = 1.96 * math.sqrt(0.1 * 0.9 / u.size)
        band = (0.1 - half, 0.1 + half)
        flags = (props >= band[0]) & (props <= band[1])
        return cls(props, band, flags, int(u.size), n_failed, label)

    def to_rows(self) -> list[dict]:
        return [{"decile": i + 1, "proportion": float(p), "lo": self.tolerance_band[0],
                 "hi": self.tolerance_band[1], "pass": bool(f)}
                for i, (p, f) in enumerate(zip(self.proportions, self.pass_flags))]


def _rep_streams(seed, reps):
    # per repetition: data, future maximum, posterior
    return [c.spawn(3) for c in np.random.SeedSequence(seed).spawn(reps)]


def _study1_values(cfg: Study1Config):
    blocks = [Horizon(N, cfg.n_y).blocks for N in cfg.horizons]
    vals = [[] for _ in cfg.horizons]
    failures = []
    if cfg.arm == "control":
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        return [rng.uniform(size=cfg.reps) for _ in cfg.horizons], failures
    for i, (s_data, s_z, s_post) in enumerate(_rep_streams(cfg.seed, cfg.reps)):
        g_data, g_z, g_post = (np.random.default_rng(s) for s in (s_data, s_z, s_post))
        n_u, exc = simulate_bgp_dataset(cfg.n, cfg.p_u, cfg.gp, g_data)
        zs = [simulate_mn(Horizon(N, cfg.n_y), cfg.p_u, cfg.gp, g_z) for N in cfg.horizons]
        try:
            if cfg.arm == "mle":
                fit = fit_gp_mle(exc, profile=False)
                p, sc, sh = n_u / cfg.n, fit.estimate.scale, fit.estimate.shape
            else:
                d = sample_gp_posterior(exc, cfg.arm, cfg.m, g_post)
                p, sc, sh = sample_pu(cfg.n, n_u, cfg.m, g_post), d.scale, d.shape
        except (SamplerError, ValueError, FloatingPointError) as exc_info:
            log.warning("study 1 repetition %d (seed entropy %s) failed: %s", i, s_post.entropy, exc_info)
            failures.append(i)
            continue
        for j, (z, b) in enumerate(zip(zs, blocks)):
            vals[j].append(_pred_prob(z, b, p, sc, sh))
    return [np.asarray(v) for v in vals], failures


def run_study1(cfg: Study1Config) -> dict[float, DecileReport]:
    """Decile report of predictive probabilities P(M_N <= z_new | x), keyed by N."""
    vals, failures = _study1_values(cfg)
    return {N: DecileReport.from_values(v, len(failures), cfg.arm_label) for N, v in zip(cfg.horizons, vals)}


@dataclass
class ReuseEstimate:
    estimate: float
    se: float
    parts: tuple[float, float]
    ses: tuple[float, float]
    ess: tuple[float, float]


def _ratio_estimate(log_w, g):
    lw = log_w - np.max(log_w)
    w = np.exp(lw)
    sw = w.sum()
    est = float(np.sum(w * g) / sw)
    var = float(np.sum((w * (g - est)) ** 2) / sw ** 2)
    ess = float(sw ** 2 / np.sum(w * w))
    return est, var, ess


def mdia_reuse(samples_flat: PosteriorSample, samples_mdi: PosteriorSample, a: float, z: float,
               h: Horizon, min_ess: float = 10.0) -> ReuseEstimate:
    """P(M_N <= z | x) under the MDI(a) prior from draws under the flat and MDI priors.

    Each sample gives a self-normalized importance-sampling estimate; the two
    are pooled with weights proportional to their inverse delta-method
    variances.  ``z`` is on the data scale of the samples' threshold.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if samples_flat.threshold.level != samples_mdi.threshold.level:
        raise ValueError("both samples must share the training threshold")
    level = samples_flat.threshold.level
    z = max(z, level)
    parts, variances, esses = [], [], []
    for s, log_w in (
        (samples_flat, np.where(samples_flat.shape >= -1.0, -a * (samples_flat.shape + 1.0), -np.inf)),
        (samples_mdi, (1.0 - a) * (samples_mdi.shape + 1.0)),
    ):
        g = np.exp(h.blocks * marginal_log_cdf(z, level, s.p_exceed, s.scale, s.shape))
        if not np.any(np.isfinite(log_w)):
            parts.append(np.nan), variances.append(np.inf), esses.append(0.0)
            continue
        est, var, ess = _ratio_estimate(log_w, g)
        parts.append(est), variances.append(var), esses.append(ess)
    if max(esses) < min_ess:
        log.warning("MDI(%g) reuse: effective sample sizes %.1f and %.1f are both below %g", a, *esses, min_ess)
    finite = [i for i in range(2) if np.isfinite(parts[i])]
    if not finite:
        raise FloatingPointError("neither proposal supports the MDI(a) posterior")
    zero_var = [i for i in finite if variances[i] == 0.0]
    if zero_var:
        i = zero_var[0]
        return ReuseEstimate(parts[i], 0.0, tuple(parts), tuple(np.sqrt(variances)), tuple(esses))
    prec = np.array([1.0 / variances[i] if i in finite else 0.0 for i in range(2)])
    est = float(sum(prec[i] * parts[i] for i in finite) / prec.sum())
    return ReuseEstimate(est, float(prec.sum() ** -0.5), tuple(parts), tuple(np.sqrt(variances)), tuple(esses))


def mdia_reuse_estimate(samples_flat: PosteriorSample, samples_mdi: PosteriorSample, a: float, z: float,
                        h: Horizon) -> float:
    """Pooled importance-sampling estimate of P(M_N <= z | x) under the MDI(a) prior."""
    return mdia_reuse(samples_flat, samples_mdi, a, z, h).estimate


def run_study1_mdia(cfg: Study1Config, a_values: Sequence[float]) -> dict[float, dict[float, DecileReport]]:
    """Decile reports for several MDI(a) priors from one flat and one MDI posterior per repetition.

    Returns {a: {N: DecileReport}}.  ``cfg.arm`` is ignored.
    """
    thr = Threshold(0.0, 1.0 - cfg.p_u, 0)
    vals = {a: {N: [] for N in cfg.horizons} for a in a_values}
    failures = 0
    for i, (s_data, s_z, s_post) in enumerate(_rep_streams(cfg.seed, cfg.reps)):
        g_data, g_z, g_post = (np.random.default_rng(s) for s in (s_data, s_z, s_post))
        n_u, exc = simulate_bgp_dataset(cfg.n, cfg.p_u, cfg.gp, g_data)
        zs = [simulate_mn(Horizon(N, cfg.n_y), cfg.p_u, cfg.gp, g_z) for N in cfg.horizons]
        try:
            samples = []
            for fam in ("flat", "mdi"):
                d = sample_gp_posterior(exc, PriorSpec(fam), cfg.m, g_post)
                p = sample_pu(cfg.n, n_u, cfg.m, g_post)
                samples.append(PosteriorSample(p, d.scale, d.shape, d.mode, d.acceptance_rate,
                                               PriorSpec(fam), thr))
        except (SamplerError, ValueError) as exc_info:
            log.warning("MDI(a) repetition %d failed: %s", i, exc_info)
            failures += 1
            continue
        for N, z in zip(cfg.horizons, zs):
            h = Horizon(N, cfg.n_y)
            for a in a_values:
                vals[a][N].append(mdia_reuse_estimate(samples[0], samples[1], a, z, h))
    return {a: {N: DecileReport.from_values(v, failures, f"mdi_a({a:g})") for N, v in per_n.items()}
            for a, per_n in vals.items()}


# --- study 2 ------------------------------------------------------------------

STUDY2_QUANTILES = tuple(np.round(np.arange(0.50, 0.90 + 1e-9, 0.05), 2))
STUDY2_N = tuple(np.geomspace(100.0, 10000.0, 20))


@dataclass
class Study2Report:
    model: str
    quantiles: np.ndarray
    horizons: np.ndarray
    strategies: list[str]
    medians: np.ndarray        # (reps, strategies, horizons); nan where a dataset failed
    true_medians: np.ndarray   # (horizons,)
    weights: np.ndarray        # (reps, thresholds)
    best_index: np.ndarray     # (reps,), -1 where failed
    n_failed: int = 0

    @property
    def ok(self) -> np.ndarray:
        return self.best_index >= 0

    @property
    def mean_weights(self) -> np.ndarray:
        return self.weights[self.ok].mean(axis=0)

    @property
    def best_frequencies(self) -> np.ndarray:
        b = self.best_index[self.ok]
        return np.bincount(b, minlength=len(self.quantiles)) / max(b.size, 1)

    def median_quantiles(self, probs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> np.ndarray:
        """(strategies, len(probs), horizons) sample quantiles of the estimated medians."""
        return np.moveaxis(np.nanquantile(self.medians[self.ok], probs, axis=0), 0, 1)

    def weight_rows(self) -> list[dict]:
        return [{"quantile": float(q), "mean_weight": float(w), "best_frequency": float(f)}
                for q, w, f in zip(self.quantiles, self.mean_weights, self.best_frequencies)]

    def median_rows(self) -> list[dict]:
        qs = self.median_quantiles()
        rows = []
        for si, name in enumerate(self.strategies):
            for ni, N in enumerate(self.horizons):
                rows.append({"strategy": name, "N": float(N), "true_median": float(self.true_medians[ni]),
                             **{f"q{p}": float(qs[si, pi, ni]) for pi, p in enumerate((5, 25, 50, 75, 95))}})
        return rows


def _strategy_names(quantiles):
    return [f"q{q:g}" for q in quantiles] + ["best", "averaged"]


def study2_dataset(x, quantiles, n_y, horizons, prior: PriorSpec, m: int, seed):
    """CV report and per-strategy medians of M_N for one dataset."""
    cfg = CvConfig(tuple(quantiles), m=m, prior=prior)
    report, fits = cross_validate(x, cfg, seed)
    thr = [f.threshold for f in fits]
    smp = [f.sample for f in fits]
    mixtures = [Mixture.single(t, s) for t, s in zip(thr, smp)]
    mixtures.append(mixtures[report.best_index])
    mixtures.append(Mixture(thr, smp, report.weights))
    med = np.empty((len(mixtures), len(horizons)))
    for si, mix in enumerate(mixtures):
        for ni, N in enumerate(horizons):
            med[si, ni] = mix.median(Horizon(N, n_y))
    return report, med


def run_study2(model: SimModel, reps: int = 200, n: int = 500, n_y: float = 10.0,
               quantiles: Sequence[float] = STUDY2_QUANTILES, horizons: Sequence[float] = STUDY2_N,
               prior: PriorSpec | None = None, m: int = SIMULATION_M, seed: int = 0) -> Study2Report:
    """Medians of M_N by threshold strategy on simulated datasets."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    prior = prior or PriorSpec()
    quantiles = np.asarray(quantiles, dtype=float)
    horizons = np.asarray(horizons, dtype=float)
    names = _strategy_names(quantiles)
    medians = np.full((reps, len(names), horizons.size), np.nan)
    weights = np.full((reps, quantiles.size), np.nan)
    best = np.full(reps, -1, dtype=int)
    failed = 0
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(reps)):
        s_data, s_fit = child.spawn(2)
        x = model.sample(n, np.random.default_rng(s_data))
        try:
            report, med = study2_dataset(x, quantiles, n_y, horizons, prior, m, s_fit)
        except (SamplerError, ValueError, ArithmeticError) as exc:
            log.warning("study 2 dataset %d failed: %s", i, exc)
            failed += 1
            continue
        medians[i], weights[i], best[i] = med, report.weights, report.best_index
    truth = np.array([model.median_mn(Horizon(N, n_y)) for N in horizons])
    return Study2Report(model.kind, quantiles, horizons, names, medians, truth, weights, best, failed)
