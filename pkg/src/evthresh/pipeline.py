"""End-to-end analysis: stability diagnostics, per-threshold posteriors, CV weights, predictive outputs."""
from __future__ import annotations

import hashlib
import logging
import platform
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cv import CvConfig, CvReport, ThresholdFit, cross_validate, truncation_sweep
from .gp import Threshold, fit_gp_mle
from .io import Dataset, DataError, write_csv, write_json
from .posterior import DEFAULT_M, posterior_summaries
from .predictive import Horizon, Mixture, NoFiniteRoot
from .priors import PriorSpec

log = logging.getLogger(__name__)

EXCESS_FLOOR = 50


@dataclass(frozen=True)
class RunConfig:
    quantiles: tuple[float, ...] = tuple(np.round(np.arange(0.0, 0.95 + 1e-9, 0.05), 2))
    prior: PriorSpec = field(default_factory=PriorSpec)
    m: int = DEFAULT_M
    horizons: tuple[float, ...] = (100.0, 1000.0, 10000.0)
    seed: int = 0
    out: str | None = None
    excess_floor: int = EXCESS_FLOOR
    n_y: float | None = None
    min_n: int = 10

    def __post_init__(self):
        q = tuple(float(v) for v in self.quantiles)
        object.__setattr__(self, "quantiles", q)
        object.__setattr__(self, "horizons", tuple(float(v) for v in self.horizons))
        if not q:
            raise ValueError("at least one threshold quantile is needed")
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if any(not N > 1 for N in self.horizons):
            raise ValueError("every horizon N must exceed 1 year")
        if self.n_y is not None and not self.n_y > 0:
            raise ValueError("n_y must be positive")

    def to_dict(self) -> dict:
        return {"quantiles": list(self.quantiles), "prior": self.prior.to_dict(), "m": self.m,
                "horizons": list(self.horizons), "seed": self.seed, "excess_floor": self.excess_floor,
                "n_y": self.n_y, "min_n": self.min_n}


def stability_table(d: Dataset, quantiles, level: float = 0.95) -> list[dict]:
    """GP MLE diagnostics per threshold, including the profile-likelihood interval for the shape."""
    rows = []
    for q in quantiles:
        thr = Threshold.from_quantile(d.values, q)
        row = {"quantile": float(q), "level": thr.level, "n_exceed": thr.n_exceed, "scale_hat": np.nan,
               "shape_hat": np.nan, "shape_lo": np.nan, "shape_hi": np.nan, "error": ""}
        exc = d.values[d.values > thr.level] - thr.level
        if exc.size < 2:
            row["error"] = f"only {exc.size} excesses"
        else:
            try:
                fit = fit_gp_mle(exc, level=level)
                row.update(scale_hat=fit.estimate.scale, shape_hat=fit.estimate.shape,
                           shape_lo=fit.shape_ci_lo, shape_hi=fit.shape_ci_hi)
                if not fit.converged:
                    row["error"] = "optimizer did not converge"
            except (ValueError, ArithmeticError, RuntimeError) as exc_info:
                row["error"] = str(exc_info)
        rows.append(row)
    return rows


@dataclass
class AnalysisBundle:
    dataset: Dataset
    config: RunConfig
    n_y: float
    fits: list[ThresholdFit]
    report: CvReport
    summaries: list[dict]
    curves: dict[float, dict[str, np.ndarray]]
    returns: list[dict]
    sensitivity: list[dict]
    stability: list[dict]
    warnings: list[str] = field(default_factory=list)

    def manifest(self) -> dict:
        digest = hashlib.sha256(np.ascontiguousarray(self.dataset.values).tobytes()).hexdigest()
        return {
            "config": self.config.to_dict(),
            "data": {"label": self.dataset.label, "n": self.dataset.n, "n_y": self.n_y, "sha256": digest},
            "seed": self.config.seed,
            "versions": {"evthresh": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "warnings": self.warnings,
        }


def _source_name(t: Threshold) -> str:
    return f"q{t.quantile_prob:g}"


def _solve_or_note(fn):
    try:
        return fn(), ""
    except NoFiniteRoot as exc:
        return np.nan, f"no finite root; CDF supremum {exc.supremum:.6g}"
    except ValueError as exc:
        return np.nan, str(exc)


def run_pipeline(d: Dataset, cfg: RunConfig) -> AnalysisBundle:
    """Full analysis of ``d``; nothing is written to disk (see :func:`write_bundle`)."""
    if d.n < cfg.min_n:
        raise DataError(f"{d.n} observations is below the minimum of {cfg.min_n}")
    n_y = cfg.n_y if cfg.n_y is not None else d.n_y
    if n_y is None:
        raise DataError("observations per year unknown: pass n_y or a year column")
    notes = []
    thresholds = [Threshold.from_quantile(d.values, q) for q in cfg.quantiles]
    for t in thresholds:
        if t.n_exceed < cfg.excess_floor:
            msg = f"threshold quantile {t.quantile_prob:g} has {t.n_exceed} excesses (< {cfg.excess_floor})"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)

    cv_cfg = CvConfig(cfg.quantiles, m=cfg.m, prior=cfg.prior)
    report, fits = cross_validate(d.values, cv_cfg, cfg.seed)
    summaries = [{"quantile": f.threshold.quantile_prob, "level": f.threshold.level,
                  "n_exceed": f.threshold.n_exceed, **posterior_summaries(f.sample)} for f in fits]

    thr = [f.threshold for f in fits]
    smp = [f.sample for f in fits]
    sources = {_source_name(t): Mixture.single(t, s) for t, s in zip(thr, smp)}
    sources["averaged"] = Mixture(thr, smp, report.weights)

    curves, returns = {}, []
    for N in cfg.horizons:
        h = Horizon(N, n_y)
        z = sources["averaged"].curve_grid(h)
        curves[N] = {"z": z, **{name: mix.curve(h, name, z).prob for name, mix in sources.items()}}
        for name, mix in sources.items():
            zp, note_p = _solve_or_note(lambda: mix.return_level(N, n_y))
            med, note_m = _solve_or_note(lambda: mix.median(h))
            returns.append({"N": N, "source": name, "return_level": zp, "median_MN": med,
                            "note": "; ".join(x for x in (note_p, note_m) if x)})

    sensitivity = []
    for rep in truncation_sweep(d.values, fits, cv_cfg.prior_probs()):
        for rec in rep.records:
            sensitivity.append({"top_quantile": rep.validation.quantile_prob, "quantile": rec.threshold.quantile_prob,
                                "level": rec.threshold.level, "T_hat": rec.t_hat, "weight": rec.weight})

    stab = stability_table(d, cfg.quantiles)
    return AnalysisBundle(d, cfg, float(n_y), fits, report, summaries, curves, returns, sensitivity, stab, notes)


def write_bundle(b: AnalysisBundle, out) -> Path:
    """Write the run directory (manifest plus tables)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", b.manifest())
    write_csv(out / "thresholds.csv", b.stability)
    write_csv(out / "weights.csv", b.report.rows())
    write_json(out / "cv_report.json", b.report.to_dict())
    write_json(out / "posterior_summaries.json", b.summaries)
    write_csv(out / "returns.csv", b.returns)
    write_csv(out / "sensitivity.csv", b.sensitivity)
    for N, cols in b.curves.items():
        names = list(cols)
        rows = [{k: cols[k][i] for k in names} for i in range(cols["z"].size)]
        write_csv(out / "curves" / f"{N:g}.csv", rows, names)
    return out
