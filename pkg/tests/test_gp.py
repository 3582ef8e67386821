import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from evthresh.gp import (
    XI_EPS, BgpParams, GpParams, Threshold, bgp_log_obs_density, bgp_loglik, bgp_marginal_cdf,
    fit_gp_mle, gp_cdf, gp_logpdf, gp_loglik, gp_quantile, gp_sample, implied_at_threshold,
    logpdf,
)

shapes = st.floats(-0.9, 1.5)
scales = st.floats(0.05, 20.0)


def test_logpdf_exponential_limit():
    assert gp_logpdf(1.0, GpParams(1.0, 0.0)) == pytest.approx(-1.0, abs=1e-15)


def test_logpdf_beyond_endpoint():
    assert gp_logpdf(3.0, GpParams(1.0, -0.5)) == -np.inf


def test_logpdf_matches_cdf_derivative():
    p = GpParams(2.0, 0.1)
    h = 1e-5
    deriv = (gp_cdf(1.0 + h, p) - gp_cdf(1.0 - h, p)) / (2 * h)
    assert math.exp(gp_logpdf(1.0, p)) == pytest.approx(deriv, rel=1e-8)


@pytest.mark.parametrize("scale,shape", [(1.0, 0.1), (2.5, -0.3), (0.7, 0.8), (1.0, 1e-4)])
def test_logpdf_against_scipy(scale, shape):
    y = np.linspace(0, 3, 13)
    ref = stats.genpareto.logpdf(y, shape, scale=scale)
    assert np.allclose(logpdf(y, scale, shape), ref, rtol=1e-10, atol=1e-12)


def test_cdf_values():
    assert gp_cdf(1.0, GpParams(1.0, 0.0)) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert gp_cdf(2.0, GpParams(1.0, -0.5)) == 1.0
    p = GpParams(1.0, 0.1)
    quad = integrate.quad(lambda y: math.exp(gp_logpdf(y, p)), 0, 3, epsabs=1e-14)[0]
    assert gp_cdf(3.0, p) == pytest.approx(quad, abs=1e-12)


def test_quantile_values():
    assert gp_quantile(0.0, GpParams(3.0, 0.4)) == 0.0
    assert gp_quantile(1 - math.exp(-1), GpParams(1.0, 0.0)) == pytest.approx(1.0, rel=1e-14)
    p = GpParams(1.0, 0.1)
    assert gp_cdf(gp_quantile(0.99, p), p) == pytest.approx(0.99, abs=1e-10)


def test_quantile_one_rejected_for_unbounded_tail():
    with pytest.raises(ValueError):
        gp_quantile(1.0, GpParams(1.0, 0.0))
    assert gp_quantile(1.0, GpParams(1.0, -0.5)) == pytest.approx(2.0)


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        gp_logpdf(-1.0, GpParams(1.0, 0.0))
    with pytest.raises(ValueError):
        gp_cdf(np.nan, GpParams(1.0, 0.0))
    with pytest.raises(ValueError):
        GpParams(0.0, 0.1)
    with pytest.raises(ValueError):
        BgpParams(1.5, GpParams(1.0, 0.0))


@settings(max_examples=60, deadline=None)
@given(q=st.floats(0.0, 0.999999), scale=scales, shape=shapes)
def test_quantile_cdf_round_trip(q, scale, shape):
    p = GpParams(scale, shape)
    assert gp_cdf(gp_quantile(q, p), p) == pytest.approx(q, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(scale=scales, shape=shapes, y=st.lists(st.floats(0, 50), min_size=2, max_size=10))
def test_cdf_monotone_and_bounded(scale, shape, y):
    p = GpParams(scale, shape)
    ys = np.sort(y)
    c = gp_cdf(ys, p)
    assert np.all(np.diff(c) >= 0) and np.all((c >= 0) & (c <= 1))
    assert gp_cdf(0.0, p) == 0.0


@pytest.mark.parametrize("eps", [1e-7, -1e-7, 9e-7, -9e-7])
def test_small_shape_agrees_with_exponential_branch(eps):
    y = np.array([0.1, 1.0, 5.0])
    base_pdf = logpdf(y, 1.3, 0.0)
    assert np.allclose(np.exp(logpdf(y, 1.3, eps)), np.exp(base_pdf), rtol=1e-8)
    assert np.allclose(gp_cdf(y, GpParams(1.3, eps)), gp_cdf(y, GpParams(1.3, 0.0)), rtol=1e-8)
    # just outside the switch the general branch is still close
    assert np.allclose(np.exp(logpdf(y, 1.3, 2 * XI_EPS)), np.exp(base_pdf), rtol=1e-4)


def test_sample_moments_and_endpoint():
    rng = np.random.default_rng(0)
    assert gp_sample(0, GpParams(1.0, 0.0), rng).size == 0
    x = gp_sample(10**5, GpParams(1.0, 0.0), rng)
    assert abs(x.mean() - 1.0) < 4 * x.std() / math.sqrt(x.size)
    assert gp_sample(10**5, GpParams(1.0, -0.5), rng).max() < 2.0


def test_sample_deterministic():
    p = GpParams(1.0, 0.2)
    assert np.array_equal(gp_sample(5, p, np.random.default_rng(3)), gp_sample(5, p, np.random.default_rng(3)))


def test_bgp_obs_density_cases():
    u = Threshold(0.0, 0.5, 0)
    th = BgpParams(0.5, GpParams(1.0, 0.0))
    assert bgp_log_obs_density(-2.0, u, th) == pytest.approx(math.log(0.5))
    assert bgp_log_obs_density(0.0, u, th) == pytest.approx(math.log(0.5))
    assert bgp_log_obs_density(1.0, u, th) == pytest.approx(math.log(0.5) - 1)


@pytest.mark.parametrize("p,scale,shape", [(0.3, 1.0, 0.2), (0.8, 2.0, -0.4), (0.05, 0.5, 0.9)])
def test_bgp_density_normalizes(p, scale, shape):
    u = Threshold(1.0, 0.5, 0)
    th = BgpParams(p, GpParams(scale, shape))
    upper = np.inf if shape >= 0 else -scale / shape
    above = integrate.quad(lambda x: math.exp(bgp_log_obs_density(1.0 + x, u, th)), 0, upper, limit=200)[0]
    assert (1 - p) + above == pytest.approx(1.0, abs=1e-8)


def test_bgp_loglik():
    u = Threshold(2.0, 0.5, 0)
    th = BgpParams(0.3, GpParams(1.5, 0.2))
    assert bgp_loglik([0.0, 1.0, 2.0], u, th) == pytest.approx(3 * math.log(0.7))
    data = np.array([0.5, 2.5, 3.0, 1.0, 7.0])
    hand = sum(bgp_log_obs_density(x, u, th) for x in data)
    assert bgp_loglik(data, u, th) == pytest.approx(hand, rel=1e-14)
    assert bgp_loglik(data[::-1], u, th) == pytest.approx(hand, rel=1e-14)


def test_implied_examples():
    th = BgpParams(0.5, GpParams(1.0, 0.0))
    r = implied_at_threshold(th, 0.0, 1.0)
    assert r.p_exceed == pytest.approx(0.5 * math.exp(-1)) and r.gp.scale == pytest.approx(1.0)
    r = implied_at_threshold(BgpParams(0.5, GpParams(1.0, -0.5)), 0.0, 2.0)
    assert r.p_exceed == 0.0
    th = BgpParams(0.5, GpParams(1.0, 1.0))
    r = implied_at_threshold(th, 0.0, 1.0)
    assert r.p_exceed == pytest.approx(0.5 * (1 - gp_cdf(1.0, th.gp)))
    assert (r.p_exceed, r.gp.scale) == pytest.approx((0.25, 2.0))
    assert implied_at_threshold(th, 3.0, 3.0) == th
    with pytest.raises(ValueError):
        implied_at_threshold(th, 1.0, 0.5)


@settings(max_examples=80, deadline=None)
@given(p=st.floats(0.01, 1.0), scale=scales, shape=shapes,
       d1=st.floats(0, 3), d2=st.floats(0, 3), dx=st.floats(1e-3, 5))
def test_validation_threshold_invariance(p, scale, shape, d1, d2, dx):
    th = BgpParams(p, GpParams(scale, shape))
    v1, v2 = d1, d1 + d2
    a, b = implied_at_threshold(th, 0.0, v1), implied_at_threshold(th, 0.0, v2)
    x = v2 + dx
    if b.p_exceed == 0 or not np.isfinite(gp_logpdf(x - v2, b.gp)):
        return
    lhs = math.log(a.p_exceed) + gp_logpdf(x - v1, a.gp)
    rhs = math.log(b.p_exceed) + gp_logpdf(x - v2, b.gp)
    assert math.exp(lhs - rhs) == pytest.approx(1.0, abs=1e-12)


def test_marginal_cdf():
    u = Threshold(1.0, 0.5, 0)
    th = BgpParams(0.4, GpParams(2.0, 0.3))
    assert bgp_marginal_cdf(1.0 + 1e-12, u, th) == pytest.approx(0.6)
    z = np.linspace(1.1, 20, 9)
    assert np.allclose(bgp_marginal_cdf(z, u, th), 1 - 0.4 * (1 - gp_cdf(z - 1.0, th.gp)), rtol=1e-14)
    assert bgp_marginal_cdf(3.0, u, BgpParams(0.4, GpParams(1.0, -0.5))) == 1.0
    with pytest.raises(ValueError):
        bgp_marginal_cdf(1.0, u, th)


def test_mle_large_exponential_sample():
    x = np.random.default_rng(1).standard_exponential(10**4)
    fit = fit_gp_mle(x)
    assert abs(fit.estimate.shape) < 0.05
    assert fit.converged and fit.shape_ci_lo <= fit.estimate.shape <= fit.shape_ci_hi
    assert fit.max_loglik >= gp_loglik(x, 1.0, 0.0)


def test_mle_two_points_beats_probes():
    fit = fit_gp_mle([1.0, 2.0], profile=False)
    rng = np.random.default_rng(2)
    for _ in range(100):
        sc, sh = math.exp(rng.uniform(-3, 3)), rng.uniform(-1, 2)
        assert fit.max_loglik >= gp_loglik([1.0, 2.0], sc, sh) - 1e-9


def test_mle_scale_equivariance():
    x = stats.genpareto.rvs(0.2, size=300, random_state=3)
    a, b = fit_gp_mle(x), fit_gp_mle(x * 7.5)
    assert b.estimate.scale == pytest.approx(7.5 * a.estimate.scale, rel=1e-5)
    assert b.estimate.shape == pytest.approx(a.estimate.shape, abs=1e-6)
    assert b.shape_ci_lo == pytest.approx(a.shape_ci_lo, abs=1e-5)


def test_mle_profile_interval_matches_deviance():
    x = stats.genpareto.rvs(0.1, scale=2.0, size=200, random_state=4)
    fit = fit_gp_mle(x)
    # profile deviance at each end is the chi-square(1) 95% point
    from scipy.optimize import minimize_scalar
    for xi in (fit.shape_ci_lo, fit.shape_ci_hi):
        prof = -minimize_scalar(lambda ls: -gp_loglik(x, math.exp(ls), xi), bounds=(-5, 5), method="bounded",
                                options={"xatol": 1e-10}).fun
        assert 2 * (fit.max_loglik - prof) == pytest.approx(stats.chi2.ppf(0.95, 1), abs=2e-3)


def test_threshold_counts_strict_exceedances():
    data = [1.0, 2.0, 2.0, 3.0]
    t = Threshold.at_level(data, 2.0)
    assert t.n_exceed == 1
    q = Threshold.from_quantile(np.arange(11.0), 0.5)
    assert q.level == 5.0 and q.n_exceed == 5
