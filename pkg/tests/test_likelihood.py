import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from lcmflow.exceptions import CalibrationError, DomainError
from lcmflow.likelihood import (GaussianLikelihood, LcmLikelihood, LcmParams,
                                LogLogisticLikelihood, ParamLut, TrainingSet, baseline_fits,
                                binned_ks, fit_lut, fit_lut_detailed, ks_statistic, ks_uniform,
                                lcm_cdf, lcm_central_mass, lcm_confidence_halfwidth,
                                lcm_irls_weight, lcm_logpdf, lcm_pdf, lcm_rvs, lut_lookup,
                                nll_cost, place_knots)

thetas = st.tuples(st.floats(0.05, 0.95), st.floats(0.01, 10.0), st.floats(0.0, 1.0))


def quad_cdf(x, theta):
    """Independent CDF: 1/2 plus the quadrature of the density over [0, x]."""
    val, _ = integrate.quad(lcm_pdf, 0.0, abs(x), args=(theta,), epsabs=1e-13, epsrel=1e-12,
                            limit=200, points=[min(abs(x), theta[1])])
    return 0.5 + np.sign(x) * val


# -- density -----------------------------------------------------------------

def test_pdf_examples():
    assert lcm_pdf(0.0, (0.5, 1.0, 1.0)) == pytest.approx(0.5, abs=1e-15)
    assert lcm_pdf(0.0, (0.5, 1.0, 0.0)) == pytest.approx(1 / np.pi, abs=1e-15)


@pytest.mark.parametrize("theta", [(0.0, 1.0, 0.5), (1.0, 1.0, 0.5), (0.5, 0.0, 0.5),
                                   (0.5, 1.0, -0.1), (0.5, 1.0, 1.1)])
def test_invalid_params_rejected(theta):
    with pytest.raises(DomainError):
        lcm_pdf(0.0, theta)
    with pytest.raises(DomainError):
        LcmParams(*theta)


def test_pdf_reduces_to_components():
    x = np.linspace(-20, 20, 401)
    np.testing.assert_allclose(lcm_pdf(x, (0.3, 2.0, 1.0)),
                               stats.laplace.pdf(x, scale=1 / np.tan(0.15 * np.pi)), atol=1e-15)
    np.testing.assert_allclose(lcm_pdf(x, (0.3, 2.0, 0.0)), stats.cauchy.pdf(x, scale=2.0),
                               atol=1e-15)


@given(thetas, st.floats(-1e3, 1e3))
def test_pdf_symmetric_positive_and_cdf_antisymmetric(theta, x):
    assert lcm_pdf(x, theta) == lcm_pdf(-x, theta)
    assert lcm_pdf(x, theta) > 0
    assert lcm_cdf(-x, theta) == pytest.approx(1 - lcm_cdf(x, theta), abs=1e-12)
    assert lcm_cdf(0.0, theta) == 0.5


@given(thetas, st.floats(-50, 50))
def test_logpdf_matches_log_of_pdf(theta, x):
    assert lcm_logpdf(x, theta) == pytest.approx(np.log(lcm_pdf(x, theta)), abs=1e-12)


def test_logpdf_stays_finite_in_far_tails():
    assert np.isfinite(lcm_logpdf(1e8, (0.9, 0.01, 0.99)))


def test_cdf_examples_and_monotone():
    assert lcm_cdf(1.0, (0.5, 1.0, 0.0)) == pytest.approx(0.75, abs=1e-15)
    x = np.linspace(-30, 30, 2001)
    assert np.all(np.diff(lcm_cdf(x, (0.4, 0.3, 0.6))) > 0)


@pytest.mark.parametrize("theta", [(0.6, 0.1, 0.8), (0.2, 3.0, 0.3), (0.95, 0.05, 0.5)])
def test_cdf_matches_quadrature(theta):
    for x in np.linspace(-8, 8, 17):
        assert lcm_cdf(x, theta) == pytest.approx(quad_cdf(x, theta), abs=1e-8)


def test_halfwidth_examples():
    assert lcm_confidence_halfwidth((0.5, 1.0, 0.0), 0.5) == pytest.approx(1.0, rel=1e-10)
    assert lcm_confidence_halfwidth((0.5, 1.0, 1.0), 0.9) == pytest.approx(np.log(10), rel=1e-10)


@given(thetas, st.floats(0.05, 0.99))
def test_halfwidth_recovers_level(theta, level):
    c = lcm_confidence_halfwidth(theta, level)
    assert lcm_central_mass(c, theta) == pytest.approx(level, abs=1e-9)
    assert lcm_cdf(c, theta) - lcm_cdf(-c, theta) == pytest.approx(level, abs=1e-9)


def test_halfwidth_broadcasts_over_parameter_arrays():
    beta = np.array([0.2, 0.5, 0.8])
    c = lcm_confidence_halfwidth((beta, 1.0, 0.7), 0.9)
    for b, ci in zip(beta, c):
        assert ci == pytest.approx(lcm_confidence_halfwidth((b, 1.0, 0.7), 0.9))


def test_irls_weight_matches_score_derivative():
    theta = (0.4, 0.7, 0.6)
    x = np.array([-5.0, -0.3, 0.2, 1.0, 4.0])
    h = 1e-6
    psi = -(lcm_logpdf(x + h, theta) - lcm_logpdf(x - h, theta)) / (2 * h)
    np.testing.assert_allclose(lcm_irls_weight(x, theta), psi / x, rtol=1e-6)


def test_rvs_follow_the_cdf():
    theta = (0.6, 0.1, 0.8)
    z = lcm_rvs(theta, 20000, random_state=1)
    assert ks_statistic(z, lambda x: lcm_cdf(x, theta)) < 0.015
    np.testing.assert_array_equal(z, lcm_rvs(theta, 20000, random_state=1))


# -- lookup table ------------------------------------------------------------

LUT = ParamLut([0.1, 10.0, 1000.0], [[0.2, 2.0, 0.3], [0.6, 0.5, 0.7], [0.8, 0.1, 0.9]])


def test_lut_exact_at_knots_and_midpoint():
    for k, e in zip(LUT.knots, LUT.entries):
        assert lut_lookup(k, LUT).as_tuple() == pytest.approx(tuple(e), abs=1e-15)
    mid = lut_lookup(1.0, LUT)
    np.testing.assert_allclose(mid.as_tuple(), LUT.entries[:2].mean(axis=0), atol=1e-15)


def test_lut_clamps_outside_knots():
    assert lut_lookup(0.0, LUT).as_tuple() == tuple(LUT.entries[0])
    assert lut_lookup(1e9, LUT).as_tuple() == tuple(LUT.entries[-1])


def test_lut_is_continuous():
    t = np.logspace(-2, 4, 20001)
    beta, gamma, w = LUT.lookup(t)
    for p in (beta, gamma, w):
        assert np.max(np.abs(np.diff(p))) < 1e-3


def test_lut_rejects_bad_input():
    with pytest.raises(DomainError):
        ParamLut([1.0, 1.0], [[0.5, 1, 0.5]] * 2)
    with pytest.raises(DomainError):
        ParamLut([1.0], [[1.5, 1, 0.5]])
    with pytest.raises(DomainError):
        LUT.lookup(-1.0)


def test_lut_json_round_trip(tmp_path):
    path = tmp_path / "lut.json"
    LUT.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"knots", "entries", "texture_units"}
    assert set(doc["entries"][0]) == {"beta", "gamma", "w_l"}
    assert doc["texture_units"] == "intensity2_per_pixel2"
    back = ParamLut.load(path)
    np.testing.assert_array_equal(back.knots, LUT.knots)
    np.testing.assert_array_equal(back.entries, LUT.entries)


# -- objective and calibration -----------------------------------------------

def test_nll_cost_examples():
    data = TrainingSet([0.0], [3.0])
    assert nll_cost([[0.5, 1.0, 0.0]], data, [1.0]) == pytest.approx(np.log(np.pi), abs=1e-15)
    rng = np.random.default_rng(2)
    d = TrainingSet(rng.standard_cauchy(500), rng.uniform(0, 2000, 500))
    assert nll_cost(LUT.entries, d.concat(d), LUT.knots) == pytest.approx(
        nll_cost(LUT.entries, d, LUT.knots), abs=1e-14)
    with pytest.raises(DomainError):
        nll_cost(LUT.entries, TrainingSet([], []), LUT.knots)


def test_nll_cost_matches_naive_loop():
    rng = np.random.default_rng(3)
    z = rng.standard_cauchy(1000)
    t = 10 ** rng.uniform(-3, 4, 1000)
    lk = np.log10(LUT.knots)
    total = 0.0
    for zi, ti in zip(z, t):
        s = min(max(np.log10(max(ti, 1e-3)), lk[0]), lk[-1])
        j = min(int(np.searchsorted(lk, s, side="right")) - 1, len(lk) - 2)
        lam = (s - lk[j]) / (lk[j + 1] - lk[j])
        theta = [(1 - lam) * LUT.entries[j, p] + lam * LUT.entries[j + 1, p] for p in range(3)]
        rate = np.tan(np.pi * theta[0] / 2)
        pdf = (0.5 * theta[2] * rate * np.exp(-abs(zi) * rate)
               + (1 - theta[2]) * theta[1] / (np.pi * (theta[1] ** 2 + zi ** 2)))
        total -= np.log(pdf)
    assert nll_cost(LUT.entries, TrainingSet(z, t), LUT.knots) == pytest.approx(
        total / len(z), abs=1e-12)


@pytest.fixture(scope="module")
def oracle_fit():
    theta = (0.6, 0.1, 0.8)
    z = lcm_rvs(theta, 100_000, random_state=7)
    data = TrainingSet(z, np.full(len(z), 5.0))
    return theta, data, fit_lut_detailed(data, [5.0], random_state=0)


def test_single_knot_oracle_recovery(oracle_fit):
    theta, data, fit = oracle_fit
    beta, gamma, w_l = fit.lut.entries[0]
    assert beta == pytest.approx(theta[0], abs=0.05)
    assert w_l == pytest.approx(theta[2], abs=0.05)
    assert gamma == pytest.approx(theta[1], rel=0.1)
    assert fit.cost <= nll_cost([theta], data, [5.0]) + 1e-3
    assert fit.cost <= fit.initial_cost
    assert np.all(np.diff(fit.history) <= 0)


def test_two_population_recovery():
    a, b = (0.6, 0.1, 0.8), (0.3, 1.0, 0.5)
    za = lcm_rvs(a, 40_000, random_state=1)
    zb = lcm_rvs(b, 40_000, random_state=2)
    data = TrainingSet(np.concatenate([za, zb]), np.r_[np.full(40_000, 1.0), np.full(40_000, 100.0)])
    fit = fit_lut_detailed(data, [1.0, 100.0], n_restarts=2)
    for got, want in zip(fit.lut.entries, (a, b)):
        assert got[0] == pytest.approx(want[0], abs=0.05)
        assert got[2] == pytest.approx(want[2], abs=0.05)
        assert got[1] == pytest.approx(want[1], rel=0.1)
    assert np.all(np.diff(fit.history) <= 0)


def test_fit_reports_starved_knots():
    data = TrainingSet(np.zeros(150), np.r_[np.full(140, 1.0), np.full(10, 1000.0)])
    with pytest.raises(CalibrationError) as info:
        fit_lut(data, [1.0, 1000.0])
    assert list(info.value.starved) == [1000.0]


def test_place_knots_drops_sparse_bins():
    t = np.r_[np.logspace(-1, 2, 5000), [1e5] * 5]
    knots, dropped = place_knots(t, 8, hi_quantile=1.0)
    assert len(knots) + len(dropped) == 8
    assert dropped and all(c < 100 for c in dropped.values())


# -- goodness of fit and baselines -------------------------------------------

def test_ks_examples():
    assert ks_statistic([0.0], stats.norm.cdf) == 0.5
    n = 999
    q = stats.norm.ppf(np.arange(1, n + 1) / (n + 1))
    assert ks_statistic(q, stats.norm.cdf) == pytest.approx(1 / (n + 1), abs=1e-12)
    with pytest.raises(DomainError):
        ks_uniform([])


def test_ks_invariant_under_monotone_transform():
    x = np.random.default_rng(4).normal(size=300)
    d = ks_statistic(x, stats.norm.cdf)
    assert ks_statistic(np.exp(x), lambda y: stats.norm.cdf(np.log(y))) == pytest.approx(d,
                                                                                         abs=1e-14)


def test_ks_matches_scipy():
    x = np.random.default_rng(5).standard_cauchy(777)
    assert ks_statistic(x, stats.cauchy.cdf) == pytest.approx(
        stats.kstest(x, "cauchy").statistic, abs=1e-14)


def test_baseline_fits():
    z = np.random.default_rng(6).normal(0, 2, 100_000)
    fit = baseline_fits(z)
    assert fit.sigma == pytest.approx(2.0, rel=0.02)
    assert fit.ll_scale > 0 and fit.ll_shape > 0
    assert baseline_fits(np.zeros(10)).degenerate


def test_gaussian_worse_than_lcm_on_cauchy_data():
    z = np.random.default_rng(8).standard_cauchy(20_000)
    t = np.full(len(z), 1.0)
    lcm = LcmLikelihood(knots=[1.0]).fit(t, z)
    gauss = GaussianLikelihood().fit(t, z)
    d_lcm = ks_uniform(lcm.cdf(t, z))
    d_gauss = ks_uniform(gauss.cdf(t, z))
    assert d_gauss > 10 * d_lcm


def test_binned_ks_reports_each_knot_bin():
    rng = np.random.default_rng(9)
    t = np.r_[np.full(3000, 1.0), np.full(3000, 100.0), np.full(20, 1e4)]
    lut = ParamLut([1.0, 100.0, 1e4], [[0.3, 1.0, 0.5], [0.6, 0.1, 0.8], [0.6, 0.1, 0.8]])
    z = np.r_[lcm_rvs(lut.entries[0], 3000, 1), lcm_rvs(lut.entries[1], 3000, 2),
              rng.normal(size=20)]
    rows = binned_ks(TrainingSet(z, t), lut)
    assert [r.n for r in rows] == [3000, 3000, 20]
    assert rows[0].ks_lcm < 0.03 and rows[1].ks_lcm < 0.03
    assert rows[0].ks_gauss > rows[0].ks_lcm
    assert np.isnan(rows[2].ks_lcm)


# -- estimators --------------------------------------------------------------

def test_lcm_estimator_sklearn_api():
    from sklearn.base import clone

    est = LcmLikelihood(n_knots=3, random_state=1)
    assert clone(est).get_params() == est.get_params()
    rng = np.random.default_rng(10)
    t = 10 ** rng.uniform(-1, 3, 6000)
    z = lcm_rvs((0.5, 0.5, 0.7), 6000, random_state=3)
    est.fit(t.reshape(-1, 1), z)
    assert est.predict(t[:5]).shape == (5, 3)
    assert est.score(t, z) == pytest.approx(-est.cost_, abs=1e-12)
    hw = est.confidence_halfwidth(t[:4])
    assert hw.shape == (4,) and np.all(hw > 0)


def test_from_lut_and_bind_agree():
    est = LcmLikelihood.from_lut(LUT)
    t = np.array([0.5, 50.0])
    z = np.array([0.3, -2.0])
    bound = est.bind(t)
    np.testing.assert_allclose(bound.logpdf(z), est.score_samples(t, z))
    np.testing.assert_allclose(bound.halfwidth(0.9), est.confidence_halfwidth(t))


def test_estimators_reject_bad_shapes():
    with pytest.raises(DomainError):
        GaussianLikelihood().fit(np.ones((3, 2)), np.ones(3))
    with pytest.raises(DomainError):
        GaussianLikelihood().fit(np.ones(3), np.ones(4))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0))
def test_loglogistic_estimator_recovers_scale(scale):
    a = stats.fisk.rvs(c=3.0, scale=scale, size=5000, random_state=11)
    est = LogLogisticLikelihood().fit(np.zeros(5000), a)
    assert est.scale_ == pytest.approx(scale, rel=0.05)
    assert est.shape_ == pytest.approx(3.0, rel=0.1)
