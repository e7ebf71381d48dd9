import math

import numpy as np
import pytest
from scipy import stats

from symlik.integrals import block_update
from symlik.likelihood import (
    AnalyticEstimator,
    ApproximateEstimator,
    ExactEstimator,
    LikelihoodError,
    PoissonConfig,
    SignedLogLik,
    bias_corrected_exp,
    poisson_estimator,
    soft_lower_bound,
    symbolic_loglik,
)
from symlik.loglik import LogLikEstimate
from symlik.models import GaussianModel, HeteroRegParams, HeteroRegressionModel, MvnParams, NormalMixture
from symlik.symbols import RectangleSymbol, build_component_rectangles, build_quantile_rectangle

from test_integrals import equi


def box_symbol(lower, upper, n, q=0.0):
    d = len(lower)
    return RectangleSymbol(np.asarray(lower, float), np.asarray(upper, float), n, np.empty((0, d)), np.empty((0, d)), q)


def all_external(rows):
    """The q = 0.5 limit: an empty box away from the data, every row kept."""
    top = rows.max(axis=0)
    return RectangleSymbol(top + 1.0, top + 2.0, rows.shape[0], np.empty((0, rows.shape[1])), rows, q=0.5)


# --- Poisson estimator ---------------------------------------------------------


def test_poisson_chi_zero_returns_exp_a_plus_lambda():
    # P(chi = 0) = exp(-3) ~ 0.0498, so u = 0.01 gives chi = 0
    out = poisson_estimator(lambda h: pytest.fail("no replicate should be drawn"), -7.0, 0.01)
    assert out.log_abs == -7.0 + 3.0 and out.sign == 1


def test_poisson_zero_variance_replicates_recover_exp_A():
    A, lam = -4.2, 3.0
    for u in (0.01, 0.3, 0.77, 0.999):
        out = poisson_estimator([A] * 40, A - lam, u)
        assert out.log_abs == pytest.approx(A, abs=1e-12) and out.sign == 1


def test_poisson_sign_flips_below_bound():
    # chi = 1 at u = 0.1 for lambda = 3 (cdf(0) = 0.0498, cdf(1) = 0.199)
    out = poisson_estimator([-12.0], -10.0, 0.1)
    assert out.sign == -1
    assert out.log_abs == pytest.approx(-10 + 3 + math.log(2.0 / 3.0))


def test_poisson_unbiased_with_gaussian_replicates():
    A, s2, lam = -10.0, 0.5, 3.0
    rng = np.random.default_rng(0)
    n = 20_000
    ests = np.empty(n)
    for i in range(n):
        reps = rng.normal(A, math.sqrt(s2), 20)
        out = poisson_estimator(reps, A - lam, rng.uniform())
        ests[i] = out.sign * math.exp(out.log_abs)
    se = ests.std(ddof=1) / math.sqrt(n)
    assert abs(ests.mean() - math.exp(A)) < 3 * se
    closed = math.exp(2 * A + s2 / lam) - math.exp(2 * A)
    assert abs(ests.var(ddof=1) / closed - 1) < 0.15


def test_poisson_rejects_bad_arguments():
    with pytest.raises(LikelihoodError):
        poisson_estimator([0.0], math.inf, 0.5)
    with pytest.raises(LikelihoodError):
        PoissonConfig(lam=0.0)
    with pytest.raises(LikelihoodError):
        PoissonConfig(gamma=1.5)


# --- soft lower bound ----------------------------------------------------------


def test_generic_soft_bound_arithmetic():
    s = box_symbol([0, 0], [1, 1], 100, q=0.01)
    a = soft_lower_bound(s, GaussianModel(2), None, PoissonConfig(bound_mode="generic"))
    assert a == pytest.approx(100 * 0.97**2 * 2 * math.log(0.98) - 3.0, rel=1e-12)
    assert a == pytest.approx(-6.802, abs=1e-3)


def test_marginal_cdf_soft_bound_arithmetic():
    s = box_symbol([-2, -2], [2, 2], 100)
    p = MvnParams.from_cov(np.zeros(2), np.eye(2))
    a = soft_lower_bound(s, GaussianModel(2), p, PoissonConfig(bound_mode="marginal_cdf"))
    expected = 100 * 0.97**2 * 2 * math.log(stats.norm.cdf(2) - stats.norm.cdf(-2)) - 3.0
    assert a == pytest.approx(expected, rel=1e-12)
    assert a == pytest.approx(-11.76, abs=0.01)


def test_auto_mode_uses_marginal_cdf_for_gaussian():
    s = box_symbol([-2, -2], [2, 2], 100, q=0.01)
    p = MvnParams.from_cov(np.zeros(2), np.eye(2))
    m = GaussianModel(2)
    assert soft_lower_bound(s, m, p) == soft_lower_bound(s, m, p, PoissonConfig(bound_mode="marginal_cdf"))


def test_degenerate_generic_bound_warns():
    s = box_symbol([0, 0], [1, 1], 10, q=0.0)
    with pytest.warns(UserWarning):
        a = soft_lower_bound(s, GaussianModel(2), None, PoissonConfig(gamma=1.0, bound_mode="generic"))
    assert a == -3.0


def test_generic_bound_undefined_at_half():
    s = box_symbol([0, 0], [1, 1], 10, q=0.5)
    with pytest.raises(LikelihoodError):
        soft_lower_bound(s, GaussianModel(2), None, PoissonConfig(bound_mode="generic"))


# --- bias correction -----------------------------------------------------------


def test_bias_correction_zero_variance_is_exact():
    out = bias_corrected_exp(LogLikEstimate(-8.5, 0.0, "taylor", 100))
    assert out.log_abs == -8.5 and out.sign == 1


def test_bias_correction_subtracts_half_variance():
    assert bias_corrected_exp(LogLikEstimate(-8.5, 0.4, "taylor", 100)).log_abs == pytest.approx(-8.7)


def test_signed_product():
    a, b = SignedLogLik(-1.0, -1), SignedLogLik(-2.0, -1)
    c = a * b
    assert c.log_abs == -3.0 and c.sign == 1
    with pytest.raises(LikelihoodError):
        SignedLogLik(math.nan)


# --- assembly ------------------------------------------------------------------


@pytest.fixture(scope="module")
def gaussian_data():
    rng = np.random.default_rng(3)
    p = MvnParams.from_cov(np.array([0.5, -0.5]), np.array([[1.0, 0.4], [0.4, 2.0]]))
    return GaussianModel(2), p, rng.multivariate_normal(p.mu, p.sigma, 100)


@pytest.mark.parametrize(
    "estimator", [AnalyticEstimator(), ApproximateEstimator(M=50), ExactEstimator(T=5, M=10)], ids=lambda e: e.method
)
def test_half_limit_equals_full_data(gaussian_data, estimator):
    model, p, rows = gaussian_data
    got = symbolic_loglik(all_external(rows), model, p, estimator)
    assert got.log_abs == pytest.approx(float(model.log_density(p, rows).sum()), abs=1e-9)
    assert got.sign == 1


def test_all_boundary_symbol_has_no_box_term(gaussian_data):
    model, p, rows = gaussian_data
    pts = rows[:5]
    s = RectangleSymbol(pts.min(axis=0) - 1, pts.max(axis=0) + 1, 5, pts, np.empty((0, 2)))
    got = symbolic_loglik(s, model, p, ApproximateEstimator(M=20))
    assert got.log_abs == pytest.approx(float(model.log_density(p, pts).sum()), rel=1e-12)


def test_analytic_assembly_by_hand(gaussian_data):
    model, p, rows = gaussian_data
    s = build_quantile_rectangle(rows, 0.05)
    prob = stats.multivariate_normal.cdf(s.upper, p.mu, p.sigma, lower_limit=s.lower, abseps=1e-10)
    pts = np.r_[s.boundary_points, s.external_points]
    expected = s.n_r * math.log(prob) + stats.multivariate_normal.logpdf(pts, p.mu, p.sigma).sum()
    assert symbolic_loglik(s, model, p, AnalyticEstimator()).log_abs == pytest.approx(expected, abs=1e-5)


def test_terms_add_over_rectangles(gaussian_data):
    model, p, rows = gaussian_data
    a, b = build_quantile_rectangle(rows[:50], 0.05), build_quantile_rectangle(rows[50:], 0.1)
    est = AnalyticEstimator()
    joint = symbolic_loglik([a, b], model, p, est).log_abs
    assert joint == pytest.approx(symbolic_loglik(a, model, p, est).log_abs + symbolic_loglik(b, model, p, est).log_abs)


def test_approximate_close_to_analytic():
    model, p = GaussianModel(2), MvnParams.from_cov(np.zeros(2), equi(2))
    s = box_symbol([-2, -2], [2, 2], 100)
    exact = symbolic_loglik(s, model, p, AnalyticEstimator()).log_abs
    est = ApproximateEstimator(M=20_000)
    store = est.make_store([s], model, rng=6)
    approx = est.log_estimate(s, model, p, store, np.arange(20_000))
    assert exact == pytest.approx(-8.649, abs=0.01)
    assert abs(approx.value - exact) < 4 * math.sqrt(approx.variance)


def test_dimension_mismatch(gaussian_data):
    _, p, _ = gaussian_data
    with pytest.raises(LikelihoodError):
        symbolic_loglik(box_symbol([0, 0, 0], [1, 1, 1], 5), GaussianModel(2), p)


def test_approximate_is_positive_and_replayable():
    model, p = GaussianModel(3), MvnParams.from_cov(np.zeros(3), equi(3))
    s = box_symbol([-2] * 3, [2] * 3, 100)
    est = ApproximateEstimator(M=100)
    store = est.make_store([s], model, rng=0)
    a = symbolic_loglik(s, model, p, est, store)
    b = symbolic_loglik(s, model, p, est, store)
    assert a == b and a.sign == 1


def test_exact_estimator_mostly_positive_and_unbiased_on_small_box():
    # n_r = 30, d = 2: A = 30 log P, soft bound from marginal CDFs
    model, p = GaussianModel(2), MvnParams.from_cov(np.zeros(2), equi(2))
    s = box_symbol([-2, -2], [2, 2], 30)
    A = 30 * math.log(stats.multivariate_normal.cdf([2, 2], [0, 0], equi(2), lower_limit=[-2, -2], abseps=1e-10))
    est = ExactEstimator(T=20, M=50, config=PoissonConfig(max_terms=10))
    rng = np.random.default_rng(4)
    vals = []
    for _ in range(300):
        out = symbolic_loglik(s, model, p, est, est.make_store([s], model, rng))
        vals.append(out.sign * math.exp(out.log_abs - A))
    vals = np.array(vals)
    assert np.mean(vals < 0) < 0.10
    # the ratio to exp(A) is unbiased up to path-sampler discretization
    assert abs(vals.mean() - 1.0) < 3 * vals.std(ddof=1) / math.sqrt(vals.size) + 0.02


# --- vectorised regression path ------------------------------------------------


def test_regression_batch_matches_per_rectangle_path():
    rng = np.random.default_rng(5)
    mix = {
        0: NormalMixture([0.6, 0.4], [[0, 0], [3, 1]], [np.eye(2), [[1, 0.3], [0.3, 0.5]]]),
        1: NormalMixture([1.0], [[1, -1]], [np.eye(2)]),
    }
    x2m = [0.0, 0.0]
    model = HeteroRegressionModel(x2m, mix)
    truth = HeteroRegParams(np.array([1.0, -1.0]), 0.5, -0.3, -0.5, 0.2)
    syms = []
    for g in (0, 1):
        x, _ = mix[g].sample(3000, rng)
        y = model.simulate(truth, x, g, rng)
        syms += build_component_rectangles(y, x, q=0.05, mixture=mix[g], min_count=200, group=g).symbols
    est, ref = ApproximateEstimator(M=60), ApproximateEstimator(M=60)
    store = est.make_store(syms, model, rng)
    for _ in range(10):
        theta = model.pack(truth) + rng.normal(scale=0.05, size=model.n_params)
        pp = model.unpack(theta)
        a = symbolic_loglik(syms, model, pp, est, store)
        b = symbolic_loglik(syms, model, pp, ref, store, batch=False)
        assert a.log_abs == pytest.approx(b.log_abs, rel=1e-10)
        store = block_update(store, int(rng.integers(store.n_blocks)), rng)
