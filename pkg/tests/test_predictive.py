import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evthresh.gp import BgpParams, GpParams, Threshold, bgp_marginal_cdf
from evthresh.posterior import PosteriorSample, sample_posterior
from evthresh.predictive import (
    Horizon, Mixture, NoFiniteRoot, averaged_pred_cdf, averaged_return_level, estimative_return_level,
    exceedance_count_probs, median_mn, pred_cdf_mn, predictive_return_level,
)
from evthresh.priors import PriorSpec
from evthresh.simstudies import simulate_mn

U0 = Threshold(0.0, 0.5, 250)
TH = BgpParams(0.5, GpParams(1.0, 0.1))


def atom(p=0.5, scale=1.0, shape=0.1, thr=U0):
    return PosteriorSample.degenerate(p, scale, shape, thr)


def atoms(ps, scales, shapes, thr=U0):
    return PosteriorSample(np.asarray(ps, float), np.asarray(scales, float), np.asarray(shapes, float),
                           (scales[0], shapes[0]), 1.0, PriorSpec(), thr)


@pytest.fixture(scope="module")
def real_sample():
    rng = np.random.default_rng(5)
    n = 500
    x = np.where(rng.uniform(size=n) < 0.5, 1.0 * np.expm1(-0.1 * np.log(rng.uniform(size=n))) / 0.1,
                 -rng.uniform(size=n))
    return x, sample_posterior(x, U0, PriorSpec(), m=4000, rng=1)


def test_horizon_validation():
    with pytest.raises(ValueError):
        Horizon(0.01, 10)
    assert Horizon(100, 10).blocks == 1000


def test_single_atom_cdf_is_power():
    h = Horizon(100, 10)
    z = np.array([2.0, 8.0, 30.0])
    assert np.allclose(pred_cdf_mn(z, h, U0, atom()), bgp_marginal_cdf(z, U0, TH) ** 1000, rtol=1e-12)
    with pytest.raises(ValueError):
        pred_cdf_mn(0.0, h, U0, atom())


def test_cdf_monotone(real_sample):
    _, s = real_sample
    z = np.linspace(0.5, 60, 40)
    c = pred_cdf_mn(z, Horizon(100, 10), U0, s)
    assert np.all(np.diff(c) >= 0)
    c2 = pred_cdf_mn(z, Horizon(1000, 10), U0, s)
    assert np.all(c2 <= c + 1e-15)


def test_cdf_brute_force_simulation():
    h = Horizon(100, 10)
    sims = simulate_mn(h, TH.p_exceed, TH.gp, np.random.default_rng(0), size=10**6)
    for z in (8.0, 10.0, 12.0, 15.0, 20.0):
        assert np.mean(sims <= z) == pytest.approx(pred_cdf_mn(z, h, U0, atom()), abs=2e-3)


def test_product_structure_for_fixed_theta():
    z = 11.0
    a = pred_cdf_mn(z, Horizon(30, 10), U0, atom())
    b = pred_cdf_mn(z, Horizon(70, 10), U0, atom())
    assert pred_cdf_mn(z, Horizon(100, 10), U0, atom()) == pytest.approx(a * b, rel=1e-12)


def test_degenerate_return_level_is_estimative():
    h = Horizon(1000, 10)
    zp = predictive_return_level(h, U0, atom())
    assert zp == pytest.approx(estimative_return_level(h, U0, TH), rel=1e-10)
    # F(z(N))^n_y = 1 - 1/N
    assert bgp_marginal_cdf(zp, U0, TH) ** 10 == pytest.approx(1 - 1 / 1000, abs=1e-8)


def test_thirty_seven_percent_property():
    h = Horizon(1000, 10)
    zp = predictive_return_level(h, U0, atom())
    val = pred_cdf_mn(zp, h, U0, atom())
    assert 0.3676 <= val <= 0.3681
    assert val == pytest.approx((1 - 1 / 1000) ** 1000, abs=1e-8)


def test_return_levels_increase_with_n(real_sample):
    _, s = real_sample
    levels = [predictive_return_level(Horizon(N, 10), U0, s) for N in (10, 100, 1000, 10000)]
    assert np.all(np.diff(levels) > 0)


def test_root_residuals(real_sample):
    _, s = real_sample
    mix = Mixture.single(U0, s)
    for N in (100, 1000):
        z = mix.return_level(N, 10)
        assert abs(mix.cdf(z, 10)[0] - (1 - 1 / N)) < 1e-8
        m = mix.median(Horizon(N, 10))
        assert abs(mix.cdf(m, 10 * N)[0] - 0.5) < 1e-8


def test_return_level_requires_n_above_one():
    with pytest.raises(ValueError):
        predictive_return_level(Horizon(1, 10), U0, atom())


def test_plateau_reports_supremum():
    # with p_exceed draws of 1 and shape 50 the CDF creeps toward 1 far beyond the cap
    s = atoms([0.5, 0.5], [1.0, 1.0], [0.1, 60.0])
    with pytest.raises(NoFiniteRoot) as info:
        predictive_return_level(Horizon(10000, 10), U0, s)
    assert info.value.supremum < 1 - 1e-4
    assert info.value.target == pytest.approx(1 - 1e-4)


def test_exceedance_counts_poisson_limit():
    probs = exceedance_count_probs(Horizon(100, 10), U0, TH)
    assert probs == pytest.approx([0.368, 0.368, 0.184, 0.061, 0.015], abs=0.01)
    assert probs.sum() == pytest.approx(0.996, abs=2e-3)
    big = exceedance_count_probs(Horizon(10**5, 10), U0, TH)
    assert big[0] == pytest.approx(math.exp(-1), abs=1e-5)


def test_averaged_cdf_hand_arithmetic():
    u1, u2 = Threshold(0.0, 0.5, 0), Threshold(0.5, 0.6, 0)
    s1 = atoms([0.5, 0.4], [1.0, 1.5], [0.1, -0.1], u1)
    s2 = atoms([0.3, 0.35], [1.2, 0.9], [0.0, 0.2], u2)
    h = Horizon(10, 2)
    z = 4.0

    def F(p, sc, sh, lev):
        return bgp_marginal_cdf(z, Threshold(lev, 0, 0), BgpParams(p, GpParams(sc, sh))) ** 20

    hand = 0.5 * 0.5 * (F(0.5, 1.0, 0.1, 0.0) + F(0.4, 1.5, -0.1, 0.0)) \
        + 0.5 * 0.5 * (F(0.3, 1.2, 0.0, 0.5) + F(0.35, 0.9, 0.2, 0.5))
    assert averaged_pred_cdf(z, h, [u1, u2], [s1, s2], [0.5, 0.5]) == pytest.approx(hand, rel=1e-13)


def test_averaged_single_threshold_reduces(real_sample):
    _, s = real_sample
    h = Horizon(100, 10)
    assert averaged_pred_cdf(12.0, h, [U0], [s], [1.0]) == pytest.approx(pred_cdf_mn(12.0, h, U0, s), rel=1e-14)
    assert averaged_return_level(h, [U0], [s], [1.0]) == predictive_return_level(h, U0, s)
    with pytest.raises(ValueError):
        averaged_pred_cdf(12.0, h, [U0], [s, s], [1.0])


@settings(max_examples=40, deadline=None)
@given(w=st.floats(0.0, 1.0), z=st.floats(0.6, 40))
def test_averaged_cdf_convex(w, z):
    u1, u2 = Threshold(0.0, 0.5, 0), Threshold(0.5, 0.6, 0)
    s1 = atoms([0.5, 0.4], [1.0, 1.5], [0.1, -0.1], u1)
    s2 = atoms([0.3, 0.35], [1.2, 0.9], [0.0, 0.3], u2)
    h = Horizon(50, 5)
    a, b = pred_cdf_mn(z, h, u1, s1), pred_cdf_mn(z, h, u2, s2)
    avg = averaged_pred_cdf(z, h, [u1, u2], [s1, s2], [w, 1 - w])
    assert min(a, b) - 1e-15 <= avg <= max(a, b) + 1e-15


def test_averaged_return_level_between_components():
    u1, u2 = Threshold(0.0, 0.5, 0), Threshold(0.5, 0.6, 0)
    s1 = atoms([0.5, 0.4], [1.0, 1.5], [0.1, -0.1], u1)
    s2 = atoms([0.3, 0.35], [1.2, 0.9], [0.0, 0.3], u2)
    for N in (100, 1000):
        h = Horizon(N, 5)
        z1, z2 = predictive_return_level(h, u1, s1), predictive_return_level(h, u2, s2)
        zpm = averaged_return_level(h, [u1, u2], [s1, s2], [0.3, 0.7])
        assert min(z1, z2) <= zpm <= max(z1, z2)
    assert averaged_return_level(Horizon(1000, 5), [u1, u2], [s1, s2], [0.3, 0.7]) > \
        averaged_return_level(Horizon(100, 5), [u1, u2], [s1, s2], [0.3, 0.7])


def test_median_closed_form_exponential():
    s = atom(p=0.4, scale=2.0, shape=0.0)
    h = Horizon(100, 10)
    # (1 - p e^{-z/sigma})^{n_y N} = 1/2
    expected = -2.0 * math.log(-math.expm1(math.log(0.5) / 1000) / 0.4)
    assert median_mn(h, Mixture.single(U0, s)) == pytest.approx(expected, rel=1e-10)


def test_median_nondecreasing_and_below_return_level(real_sample):
    _, s = real_sample
    mix = Mixture.single(U0, s)
    meds = [mix.median(Horizon(N, 10)) for N in (100, 1000, 10000)]
    assert np.all(np.diff(meds) > 0)


def test_curve_is_valid(real_sample):
    _, s = real_sample
    c = Mixture.single(U0, s).curve(Horizon(100, 10), "q0.5")
    assert c.z.size == 200 and c.z[0] == U0.level
    assert np.all(np.diff(c.prob) >= 0) and c.prob.min() >= 0 and c.prob.max() <= 1
    assert c.prob[-1] == pytest.approx(0.9999, abs=1e-6)
    assert c.rows()[0].keys() == {"z", "prob"}
