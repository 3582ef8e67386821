"""Threshold selection and threshold averaging for Bayesian peaks-over-threshold analysis."""

__version__ = "0.1.0"

from .gp import BgpParams, GpParams, MleFit, Threshold, fit_gp_mle  # noqa: E402
from .priors import PriorSpec, calibrate_cauchy_scale, CalibrationInputs  # noqa: E402
from .posterior import PosteriorSample, sample_posterior, posterior_summaries  # noqa: E402
from .cv import CvConfig, CvReport, cross_validate, threshold_weights  # noqa: E402
from .predictive import Horizon, Mixture, NoFiniteRoot, predictive_return_level  # noqa: E402

__all__ = [
    "BgpParams", "GpParams", "MleFit", "Threshold", "fit_gp_mle",
    "PriorSpec", "calibrate_cauchy_scale", "CalibrationInputs",
    "PosteriorSample", "sample_posterior", "posterior_summaries",
    "CvConfig", "CvReport", "cross_validate", "threshold_weights",
    "Horizon", "Mixture", "NoFiniteRoot", "predictive_return_level",
]
