import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symlik.integrals import UniformBlockStore, block_update
from symlik.likelihood import ApproximateEstimator, SignedLogLik
from symlik.models import GaussianModel, MvnParams
from symlik.pmmh import (
    AdaptiveProposal,
    FunctionTarget,
    MCMCConfig,
    NormalPrior,
    SamplerError,
    SymbolicTarget,
    effective_sample_size,
    signed_block_pmmh,
    signed_expectation,
)
from symlik.symbols import build_quantile_rectangle

from test_integrals import equi


# --- signed expectation --------------------------------------------------------


def test_signed_expectation_hand_example():
    thetas = np.array([[2.0], [4.0], [10.0]])
    assert signed_expectation(thetas, signs=[1, 1, -1])[0] == pytest.approx(-4.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([1, -1]), min_size=1, max_size=30).filter(lambda s: sum(s) != 0), st.integers(0, 2**31))
def test_signed_expectation_of_one_is_one(signs, seed):
    thetas = np.random.default_rng(seed).normal(size=(len(signs), 2))
    assert signed_expectation(thetas, lambda th: 1.0, signs) == pytest.approx(1.0)


def test_all_positive_signs_give_plain_average():
    thetas = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_allclose(signed_expectation(thetas), thetas.mean(axis=0), rtol=1e-12)


def test_zero_sign_sum_raises():
    with pytest.raises(SamplerError):
        signed_expectation(np.zeros((2, 1)), signs=[1, -1])


# --- block updates -------------------------------------------------------------


def test_single_block_refreshes_everything():
    s = UniformBlockStore.random(20, 3, 1, rng=0)
    t = block_update(s, 0, np.random.default_rng(1))
    assert np.all(t.values != s.values)


def test_one_particle_per_block_changes_one_unit():
    s = UniformBlockStore.random(20, 3, None, rng=0)
    t = block_update(s, 7, np.random.default_rng(1))
    changed = np.flatnonzero(np.any(t.values != s.values, axis=1))
    assert changed.tolist() == [7]


def test_block_update_replay_and_range():
    s = UniformBlockStore.random(10, 2, 5, rng=0)
    a = block_update(s, 2, np.random.default_rng(9))
    b = block_update(s, 2, np.random.default_rng(9))
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(IndexError):
        block_update(s, 5, np.random.default_rng(0))


# --- sampler -------------------------------------------------------------------


def test_prior_only_run_samples_the_prior():
    prior = NormalPrior(np.array([1.0, -2.0]), np.array([1.0, 3.0]))
    target = FunctionTarget(lambda th: 0.0, 2, blocks=[np.array([0]), np.array([1])])
    chain = signed_block_pmmh(target, [1.0, -2.0], MCMCConfig(iterations=40_000), prior=prior, rng=0)
    draws = chain.theta[chain.kept]
    se = draws.std(axis=0) / np.sqrt(chain.ess())
    assert np.all(np.abs(draws.mean(axis=0) - prior.mean) < 3 * se)
    assert np.allclose(draws.std(axis=0), prior.sd, rtol=0.1)


def test_acceptance_adapts_to_target():
    prec = np.diag([1.0, 4.0, 25.0])
    target = FunctionTarget(lambda th: -0.5 * th @ prec @ th, 3)
    chain = signed_block_pmmh(target, np.ones(3), MCMCConfig(iterations=20_000), rng=1)
    rate = chain.accepted[chain.kept].mean()
    assert abs(rate - 0.234) < 0.05


def test_stationary_moments_match_closed_form():
    # N(0, diag(1, 0.25)) posterior under a flat-enough prior
    prec = np.diag([1.0, 4.0])
    target = FunctionTarget(lambda th: -0.5 * th @ prec @ th, 2)
    chain = signed_block_pmmh(target, np.zeros(2), MCMCConfig(iterations=40_000), prior=NormalPrior(sd=1e3), rng=2)
    draws = chain.theta[chain.kept]
    se = np.sqrt(np.diag(np.linalg.inv(prec)) / chain.ess())
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)
    np.testing.assert_allclose(draws.var(axis=0), [1.0, 0.25], rtol=0.1)


def test_signs_are_recorded_and_reweighted():
    # likelihood sign is negative on theta < 0; |L| is a standard normal
    def fn(th):
        return SignedLogLik(float(-0.5 * th[0] ** 2), 1 if th[0] >= 0 else -1)

    chain = signed_block_pmmh(FunctionTarget(fn, 1), [0.5], MCMCConfig(iterations=20_000), rng=3)
    frac = chain.negative_sign_fraction
    assert 0.4 < frac < 0.6
    kept, signs = chain.theta[chain.kept, 0], chain.sign[chain.kept]
    assert signed_expectation(chain)[0] == pytest.approx(np.sum(kept * signs) / np.sum(signs))


def test_zero_likelihood_at_start_raises():
    target = FunctionTarget(lambda th: -math.inf, 1)
    with pytest.raises(SamplerError):
        signed_block_pmmh(target, [0.0], MCMCConfig(iterations=10), rng=0)


@pytest.fixture(scope="module")
def gaussian_target():
    rng = np.random.default_rng(4)
    p = MvnParams.from_cov(np.zeros(2), equi(2))
    x = rng.multivariate_normal(p.mu, p.sigma, 2000)
    model = GaussianModel(2)
    sym = build_quantile_rectangle(x, 0.01)
    return model, p, sym


def test_replay_is_bit_identical(gaussian_target):
    model, p, sym = gaussian_target
    cfg = MCMCConfig(iterations=150)

    def run():
        return signed_block_pmmh(SymbolicTarget(model, [sym], ApproximateEstimator(M=50)), model.pack(p), cfg, rng=11)

    a, b = run(), run()
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.log_abs_lik, b.log_abs_lik)


def test_separate_store_stream_keeps_proposals_aligned():
    # with a constant likelihood every proposal is driven by rng alone
    target = FunctionTarget(lambda th: 0.0, 2)
    a = signed_block_pmmh(target, np.zeros(2), MCMCConfig(iterations=200), rng=5)
    b = signed_block_pmmh(target, np.zeros(2), MCMCConfig(iterations=200), rng=5, store_rng=99)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_crn_correlation_at_fixed_theta(gaussian_target):
    model, p, sym = gaussian_target
    U = M = 100
    est = ApproximateEstimator(M=M)
    rng = np.random.default_rng(6)
    store = est.make_store([sym], model, rng)
    assert store.n_blocks == U
    target = SymbolicTarget(model, [sym], est)
    theta = model.pack(p)
    vals = []
    for _ in range(2000):
        store = block_update(store, int(rng.integers(U)), rng)
        vals.append(target.log_lik(theta, store).log_abs)
    corr = np.corrcoef(vals[:-1], vals[1:])[0, 1]
    assert corr >= (U - 1) / U - 0.1


def test_adaptive_proposal_invariants():
    prop = AdaptiveProposal(3, adapt_start=20)
    rng = np.random.default_rng(7)
    for _ in range(300):
        prop.update(rng.normal(size=3) * [1, 2, 3], rng.uniform())
    cov = prop.cov
    np.testing.assert_allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > 0 and prop.scale > 0


def test_ess_of_iid_and_correlated_series():
    rng = np.random.default_rng(8)
    x = rng.normal(size=20_000)
    assert 0.8 * x.size < effective_sample_size(x) < 1.2 * x.size
    ar = np.empty(20_000)
    ar[0] = 0
    for i in range(1, ar.size):
        ar[i] = 0.9 * ar[i - 1] + rng.normal()
    # AR(1) integrated autocorrelation time (1 + phi) / (1 - phi) = 19
    assert 0.7 < effective_sample_size(ar) / (ar.size / 19) < 1.3


def test_config_validation():
    with pytest.raises(SamplerError):
        MCMCConfig(iterations=0)
    with pytest.raises(SamplerError):
        MCMCConfig(iterations=10, burn_in=10)
    with pytest.raises(SamplerError):
        AdaptiveProposal(2, target_accept=1.0)
