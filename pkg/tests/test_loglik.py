import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from symlik.integrals import IntegralEstimate, UniformBlockStore, sov_truncated_normal
from symlik.loglik import (
    LogLikError,
    TemperatureLadder,
    path_sampler_log_integral,
    taylor_log_integral,
    trapezoid_integrate,
    trapezoid_weights,
)
from symlik.models import GaussianModel, MvnParams
from symlik.symbols import RectangleSymbol

from test_integrals import ConstantModel, equi


def box_symbol(lower, upper, n):
    d = len(lower)
    return RectangleSymbol(np.asarray(lower, float), np.asarray(upper, float), n, np.empty((0, d)), np.empty((0, d)))


def test_ladder_values():
    t = TemperatureLadder(4, 5).values
    np.testing.assert_allclose(t, [(1 / 4) ** 5, (2 / 4) ** 5, (3 / 4) ** 5, 1.0])
    with pytest.raises(LogLikError):
        TemperatureLadder(0)


def test_trapezoid_constant_with_flat_start():
    t = TemperatureLadder(10).values
    assert trapezoid_integrate(t, np.full(10, 3.5)) == pytest.approx(3.5, abs=1e-14)


def test_trapezoid_linear_is_exact():
    assert trapezoid_integrate([0.0, 0.5, 1.0], [0.0, 0.5, 1.0], flat_start=False) == pytest.approx(0.5)


def test_trapezoid_rejects_bad_abscissae():
    with pytest.raises(LogLikError):
        trapezoid_weights([0.5, 0.2, 1.0])
    with pytest.raises(LogLikError):
        trapezoid_integrate([0.1, 1.0], [1.0])


def _expected_log_density_curve(ts):
    """E_{q_t}[log g] for N(0, 0.5 I + 0.5 11^T) on [-2, 2]^2 by midpoint quadrature."""
    m = 401
    g = (np.arange(m) + 0.5) / m * 4 - 2
    X, Y = np.meshgrid(g, g)
    z = np.column_stack([X.ravel(), Y.ravel()])
    logg = stats.multivariate_normal.logpdf(z, np.zeros(2), equi(2))
    out = []
    for t in ts:
        w = np.exp(t * (logg - logg.max()))
        out.append(float(w @ logg / w.sum()))
    return np.array(out), float(np.log(np.exp(logg).mean() * 16.0))


def test_trapezoid_ladder_against_fine_grid():
    ladder = TemperatureLadder(100).values
    coarse, _ = _expected_log_density_curve(ladder)
    fine_t = np.linspace(0, 1, 100_001)
    # the curve is smooth in t; evaluate it on 1001 points and interpolate onto the fine grid
    knots = np.linspace(0, 1, 1001)
    vals, log_c = _expected_log_density_curve(knots)
    fine = np.trapezoid(np.interp(fine_t, knots, vals), fine_t)
    assert abs(trapezoid_integrate(ladder, coarse) - fine) < 1e-3
    # the thermodynamic identity closes the loop: log C = log vol + integral
    assert abs(math.log(16.0) + fine - log_c) < 1e-3


def test_path_constant_density_exact():
    sym = box_symbol([0, 0], [2, 3], 50)
    s = UniformBlockStore.random(10 * 20, 12, 1, rng=0)
    est = path_sampler_log_integral(ConstantModel(0.1), None, sym, TemperatureLadder(10), 20, s)
    assert est.value == pytest.approx(50 * math.log(0.1 * 6), abs=1e-10)
    assert est.variance == 0.0


def test_path_unit_count_checked():
    sym = box_symbol([0, 0], [1, 1], 5)
    s = UniformBlockStore.random(7, 12, 1, rng=0)
    with pytest.raises(LogLikError):
        path_sampler_log_integral(ConstantModel(1.0), None, sym, TemperatureLadder(2), 4, s)


def test_path_sampler_unbiased_up_to_discretization():
    # 500 replicate estimates of 100 log P([-2, 2]^2) against the Genz oracle
    d, n, M = 2, 100, 200
    model, params = GaussianModel(d), MvnParams.from_cov(np.zeros(d), equi(d))
    sym = box_symbol([-2] * d, [2] * d, n)
    ladder = TemperatureLadder(100)
    rng = np.random.default_rng(1)
    vals = [
        path_sampler_log_integral(model, params, sym, ladder, M, UniformBlockStore.random(100 * M, 12, 100, rng)).value
        for _ in range(500)
    ]
    oracle = n * math.log(stats.multivariate_normal.cdf([2, 2], [0, 0], equi(2), lower_limit=[-2, -2], abseps=1e-10))
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - oracle) <= 3 * se + 0.05


def test_path_internal_variance_tracks_replicate_variance():
    d, M = 2, 200
    model, params = GaussianModel(d), MvnParams.from_cov(np.zeros(d), equi(d))
    sym = box_symbol([-2] * d, [2] * d, 100)
    rng = np.random.default_rng(2)
    ests = [
        path_sampler_log_integral(model, params, sym, TemperatureLadder(50), M, UniformBlockStore.random(50 * M, 12, 1, rng))
        for _ in range(200)
    ]
    ratio = np.mean([e.variance for e in ests]) / np.var([e.value for e in ests], ddof=1)
    assert 0.5 < ratio < 2.5


def test_path_determinism():
    model, params = GaussianModel(2), MvnParams.from_cov(np.zeros(2), equi(2))
    sym = box_symbol([-1, -1], [1, 2], 30)
    s = UniformBlockStore.random(5 * 10, 12, 1, rng=3)
    a = path_sampler_log_integral(model, params, sym, TemperatureLadder(5), 10, s)
    b = path_sampler_log_integral(model, params, sym, TemperatureLadder(5), 10, s)
    assert a == b


def test_taylor_hand_arithmetic():
    est = taylor_log_integral(np.array([0.5, 1.5]), 1.0)
    # (log 0.5 + log 1.5) / 2 + 0.5 / (2 * 1)
    assert est.value == pytest.approx(0.10615896377410955, rel=1e-14)


def test_taylor_zero_variance_exact():
    est = taylor_log_integral(IntegralEstimate(np.full(10, 0.3), "sov"), 40)
    assert est.value == pytest.approx(40 * math.log(0.3), rel=1e-15)
    assert est.variance == 0.0


def test_taylor_rejects_bad_input():
    with pytest.raises(LogLikError):
        taylor_log_integral(np.array([0.5]), 1.0)
    with pytest.raises(LogLikError):
        taylor_log_integral(np.array([0.5, 0.0]), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(1, 500))
def test_scaling_linearity(seed, n):
    reps = np.random.default_rng(seed).uniform(0.1, 1.0, 20)
    a, b = taylor_log_integral(reps, n), taylor_log_integral(reps, 2 * n)
    assert b.value == pytest.approx(2 * a.value, rel=1e-12)
    assert b.variance == pytest.approx(4 * a.variance, rel=1e-12)


def test_path_scaling_linearity():
    model, params = GaussianModel(2), MvnParams.from_cov(np.zeros(2), equi(2))
    s = UniformBlockStore.random(5 * 20, 12, 1, rng=4)
    box = ([-1, -1], [1, 1])
    a = path_sampler_log_integral(model, params, box, TemperatureLadder(5), 20, s, exponent_count=10)
    b = path_sampler_log_integral(model, params, box, TemperatureLadder(5), 20, s, exponent_count=20)
    assert b.value == pytest.approx(2 * a.value, rel=1e-12)
    assert b.variance == pytest.approx(4 * a.variance, rel=1e-12)


def test_taylor_variance_below_path_variance():
    d, n = 3, 100
    model, params = GaussianModel(d), MvnParams.from_cov(np.zeros(d), equi(d))
    sym = box_symbol([-2] * d, [2] * d, n)
    rng = np.random.default_rng(5)
    path, tay = [], []
    for _ in range(60):
        path.append(
            path_sampler_log_integral(
                model, params, sym, TemperatureLadder(100), 500, UniformBlockStore.random(50_000, 16, 1, rng)
            ).value
        )
        est = sov_truncated_normal(params.mu, params.sigma, sym.lower, sym.upper, UniformBlockStore.random(500, d, 1, rng))
        tay.append(taylor_log_integral(est, n).value)
    assert np.var(tay, ddof=1) < np.var(path, ddof=1)
