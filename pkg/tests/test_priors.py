import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from evthresh.priors import (
    CalibrationInputs, PriorSpec, calibrate_cauchy_scale, log_prior_gp, log_prior_pu, log_prior_shape,
    log_prior_shape_scalar, median_ratio, propriety_check, shape_tail_prob,
)


def test_mdi_a_tail_half():
    assert shape_tail_prob(PriorSpec("mdi_a", a=0.6), 0.5) == pytest.approx(math.exp(-0.9), abs=1e-12)


@pytest.mark.parametrize("x,expected", [(0.229, 0.198), (0.5, 0.100)])
def test_cauchy_tails(x, expected):
    assert shape_tail_prob(PriorSpec("cauchy", A=0.154), x) == pytest.approx(expected, abs=2e-3)


@pytest.mark.parametrize("spec", [PriorSpec("cauchy", A=0.154), PriorSpec("cauchy", A=2.0),
                                  PriorSpec("mdi"), PriorSpec("mdi_a", a=0.3)])
@pytest.mark.parametrize("x", [-0.7, 0.0, 0.229, 0.5, 3.0])
def test_closed_form_tails_match_quadrature(spec, x):
    assert shape_tail_prob(spec, x, "closed") == pytest.approx(shape_tail_prob(spec, x, "quad"), abs=1e-8)


def test_jeffreys_tail_by_quadrature_only():
    # normalizing constant of (1+x)^-1 (1+2x)^-1/2 on (-1/2, inf) is pi
    spec = PriorSpec("jeffreys")
    assert shape_tail_prob(spec, -0.5) == pytest.approx(1.0)
    val = integrate.quad(lambda t: 1 / ((1 + t) * math.sqrt(1 + 2 * t)), 0.5, np.inf)[0] / math.pi
    assert shape_tail_prob(spec, 0.5) == pytest.approx(val, rel=1e-8)


def test_flat_tail_rejected():
    with pytest.raises(ValueError):
        shape_tail_prob(PriorSpec("flat"), 0.0)


def test_supports():
    assert log_prior_gp(1.0, -0.5, PriorSpec("jeffreys")) == -np.inf
    assert np.isfinite(log_prior_gp(1.0, -0.49, PriorSpec("jeffreys")))
    for fam in ("mdi", "mdi_a", "cauchy"):
        assert np.isfinite(log_prior_gp(1.0, -1.0, PriorSpec(fam)))
        assert log_prior_gp(1.0, -1.01, PriorSpec(fam)) == -np.inf
    assert np.isfinite(log_prior_gp(1.0, -50.0, PriorSpec("flat")))
    assert log_prior_gp(0.0, 0.1, PriorSpec("flat")) == -np.inf


def test_scale_factor():
    spec = PriorSpec()
    assert log_prior_gp(4.0, 0.2, spec) - log_prior_gp(1.0, 0.2, spec) == pytest.approx(-math.log(4.0))


@settings(max_examples=40, deadline=None)
@given(s=st.floats(0.01, 100), x1=st.floats(-10, 10), x2=st.floats(-10, 10))
def test_flat_prior_flat_in_shape(s, x1, x2):
    spec = PriorSpec("flat")
    assert log_prior_gp(s, x1, spec) == log_prior_gp(s, x2, spec)


@settings(max_examples=60, deadline=None)
@given(xi=st.floats(-1.5, 5))
def test_scalar_and_vector_priors_agree(xi):
    for spec in (PriorSpec("jeffreys"), PriorSpec("flat"), PriorSpec("mdi"), PriorSpec("mdi_a", a=0.4),
                 PriorSpec("cauchy", A=0.3)):
        v, s = float(log_prior_shape(xi, spec)), log_prior_shape_scalar(xi, spec)
        assert v == s or v == pytest.approx(s, rel=1e-14)


def test_mdi_a_with_a_one_is_mdi():
    xi = np.linspace(-1, 4, 11)
    assert np.allclose(log_prior_shape(xi, PriorSpec("mdi_a", a=1.0)), log_prior_shape(xi, PriorSpec("mdi")))


def test_jeffreys_diverges_at_boundary():
    vals = [log_prior_shape_scalar(-0.5 + d, PriorSpec("jeffreys")) for d in (1e-2, 1e-4, 1e-6)]
    assert vals[0] < vals[1] < vals[2]


def test_pu_prior():
    assert math.exp(log_prior_pu(0.5)) == pytest.approx(2 / math.pi)
    assert log_prior_pu(0.2) == pytest.approx(log_prior_pu(0.8))
    assert log_prior_pu(0.0) == -np.inf and log_prior_pu(1.0) == -np.inf
    total = integrate.quad(lambda p: math.exp(log_prior_pu(p)), 0, 1)[0]
    assert total == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("spec,n,ok", [
    (PriorSpec("flat"), 2, False), (PriorSpec("flat"), 3, True), (PriorSpec("mdi"), 0, True),
    (PriorSpec("jeffreys"), 1, True), (PriorSpec("jeffreys"), 0, False), (PriorSpec("cauchy"), 0, True),
])
def test_propriety(spec, n, ok):
    assert propriety_check(spec, n).ok is ok


def test_spec_validation():
    with pytest.raises(ValueError):
        PriorSpec("gamma")
    with pytest.raises(ValueError):
        PriorSpec("mdi_a", a=0.0)
    with pytest.raises(ValueError):
        PriorSpec("cauchy", A=-1.0)


def test_calibration_reference_values():
    xi_star, A = calibrate_cauchy_scale(CalibrationInputs(4.55, 15.0, 45.0, 0.2))
    assert xi_star == pytest.approx(0.229, abs=2e-3)
    assert A == pytest.approx(0.154, abs=2e-3)
    assert median_ratio(xi_star) == pytest.approx((45 - 4.55) / (15 - 4.55), rel=1e-8)
    assert shape_tail_prob(PriorSpec("cauchy", A=A), xi_star) == pytest.approx(0.2, abs=1e-10)


def test_calibration_median_target():
    c = CalibrationInputs(4.55, 15.0, 45.0, 0.5)
    xi_star, A = calibrate_cauchy_scale(c)
    # truncation at -1 moves the median above 0, so A exceeds xi_star
    assert A > xi_star
    assert shape_tail_prob(PriorSpec("cauchy", A=A), xi_star, "quad") == pytest.approx(0.5, abs=1e-8)


def test_calibration_monotone_in_m10000():
    xs = [calibrate_cauchy_scale(CalibrationInputs(4.55, 15.0, m, 0.2))[0] for m in (35.0, 45.0, 60.0)]
    assert xs[0] < xs[1] < xs[2]


def test_calibration_inputs_validated():
    with pytest.raises(ValueError):
        CalibrationInputs(15.0, 4.55, 45.0)
    with pytest.raises(ValueError):
        calibrate_cauchy_scale(CalibrationInputs(1.0, 2.0, 2.005))


def test_median_ratio_at_zero_is_continuous():
    assert median_ratio(1e-13) == pytest.approx(median_ratio(1e-5), rel=1e-4)
