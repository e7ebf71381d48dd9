"""Simulation studies at desk scale: data generators, runners and result tables.

Every runner takes a plain config object, is deterministic given its seed
and returns a :class:`ResultTable`.  Full-size settings are available by
changing the config fields; the defaults are sized for a laptop.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .integrals import UniformBlockStore, bvn_box_probabilities, mvn_box_probability, sov_truncated_normal
from .likelihood import (
    ApproximateEstimator,
    ExactEstimator,
    PoissonConfig,
    bias_corrected_exp,
    poisson_estimator,
    soft_lower_bound,
)
from .loglik import TemperatureLadder, path_sampler_log_integral, taylor_log_integral
from .models import (
    FactorModel,
    FactorParams,
    GaussianModel,
    HeteroRegParams,
    HeteroRegressionModel,
    MvnParams,
    NormalMixture,
    select_K,
)
from .pmmh import FullDataTarget, MCMCConfig, SymbolicTarget, signed_block_pmmh, signed_expectation
from .symbols import RectangleSymbol, build_component_rectangles, build_minmax_rectangle, build_quantile_rectangle

__all__ = [
    "ResultTable",
    "Table1Config",
    "EstimatorConfig",
    "FactorConfig",
    "RegressionConfig",
    "rmse",
    "mape",
    "simulate_bivariate",
    "fit_rho_mle",
    "make_factor_data",
    "load_flight_groups",
    "make_flight_data",
    "run_table1",
    "run_estimator_comparison",
    "run_factor_experiment",
    "run_regression_experiment",
    "write_manifest",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# results


@dataclass
class ResultTable:
    """Rows of ``(setting, metric, value, sd)``."""

    name: str
    rows: list[dict] = field(default_factory=list)

    def add(self, setting: dict, metric: str, value: float, sd: float = float("nan")) -> None:
        self.rows.append({"setting": dict(setting), "metric": metric, "value": float(value), "sd": float(sd)})

    def get(self, metric: str, **setting) -> dict:
        for r in self.rows:
            if r["metric"] == metric and all(r["setting"].get(k) == v for k, v in setting.items()):
                return r
        raise KeyError(f"no row {metric!r} with {setting}")

    def value(self, metric: str, **setting) -> float:
        return self.get(metric, **setting)["value"]

    def to_csv(self, path) -> None:
        keys = sorted({k for r in self.rows for k in r["setting"]})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*keys, "metric", "value", "sd"])
            for r in self.rows:
                w.writerow([*(r["setting"].get(k, "") for k in keys), r["metric"], r["value"], r["sd"]])


def rmse(estimate, truth) -> float:
    e, t = np.ravel(estimate), np.ravel(truth)
    return float(np.sqrt(np.mean((e - t) ** 2)))


def mape(full, sda) -> float:
    """Mean absolute percentage deviation of ``sda`` from ``full``."""
    f, s = np.ravel(full), np.ravel(sda)
    return float(np.mean(np.abs(f - s) / np.abs(f)))


def _git_revision() -> Optional[str]:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_manifest(path, experiment: str, config, seed) -> dict:
    """JSON manifest with the config, its hash, the seed and the git revision."""
    cfg = asdict(config) if hasattr(config, "__dataclass_fields__") else dict(config)
    blob = json.dumps(cfg, sort_keys=True, default=str)
    manifest = {
        "experiment": experiment,
        "config": json.loads(blob),
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": seed,
        "git_revision": _git_revision(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    Path(path).write_text(json.dumps(manifest, indent=1))
    return manifest


# ---------------------------------------------------------------------------
# correlation recovery with min-max rectangles


@dataclass
class Table1Config:
    rhos: Sequence[float] = (0.0, 0.5, 0.9)
    ns: Sequence[int] = (5, 1000)
    m: int = 20
    replicates: int = 30
    mu: Sequence[float] = (2.0, 5.0)
    sd: Sequence[float] = (0.5, 0.5)
    profile: bool = False
    seed: int = 1


def simulate_bivariate(rho, n, rng, mu=(2.0, 5.0), sd=(0.5, 0.5)) -> np.ndarray:
    z = rng.standard_normal((n, 2))
    x1 = z[:, 0]
    x2 = rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1]
    return np.column_stack([mu[0] + sd[0] * x1, mu[1] + sd[1] * x2])


def _bvn_symbolic_loglik(par, lowers, uppers, n_r, xb, xb_owner):
    mu = par[:2]
    sd = np.exp(par[2:4])
    rho = math.tanh(par[4])
    probs = bvn_box_probabilities(mu, sd, rho, lowers, uppers)
    if np.any(probs <= 0):
        return -np.inf
    z1 = (xb[:, 0] - mu[0]) / sd[0]
    z2 = (xb[:, 1] - mu[1]) / sd[1]
    one_r2 = 1.0 - rho * rho
    logg = (
        -math.log(2 * math.pi) - par[2] - par[3] - 0.5 * math.log(one_r2)
        - (z1 * z1 - 2 * rho * z1 * z2 + z2 * z2) / (2 * one_r2)
    )
    return float(np.sum(n_r * np.log(probs)) + np.sum(logg))


def fit_rho_mle(symbols: Sequence[RectangleSymbol], profile: bool = False, known=None) -> float:
    """Maximum symbolic-likelihood estimate of the correlation.

    All five bivariate normal parameters are maximised jointly unless
    ``profile`` is set, in which case the means and scales are held at
    ``known = (mu, sd)`` and only ``rho`` is optimised.
    """
    lowers = np.array([s.lower for s in symbols])
    uppers = np.array([s.upper for s in symbols])
    n_r = np.array([s.n_r for s in symbols], dtype=float)
    xb = np.concatenate([s.boundary_points for s in symbols])
    owner = np.repeat(np.arange(len(symbols)), [s.n_b for s in symbols])
    if profile:
        mu, sd = known
        base = np.r_[mu, np.log(sd)]
        res = optimize.minimize_scalar(
            lambda a: -_bvn_symbolic_loglik(np.r_[base, a], lowers, uppers, n_r, xb, owner),
            bounds=(-4.0, 4.0),
            method="bounded",
        )
        return math.tanh(res.x)
    centre = 0.5 * (lowers + uppers)
    width = uppers - lowers
    n_tot = np.array([s.n_total for s in symbols], dtype=float)
    # range of n normals is roughly 2 * sqrt(2 log n) sd
    spread = 2.0 * np.sqrt(2.0 * np.log(np.maximum(n_tot, 2.0)))
    sd0 = np.mean(width / spread[:, None], axis=0)
    start = np.r_[centre.mean(axis=0), np.log(sd0), 0.0]
    res = optimize.minimize(
        lambda p: -_bvn_symbolic_loglik(p, lowers, uppers, n_r, xb, owner),
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 5000, "maxfev": 10000},
    )
    if not res.success:
        log.warning("rho MLE did not converge: %s", res.message)
    return math.tanh(res.x[4])


def run_table1(config: Table1Config = Table1Config()) -> ResultTable:
    """Mean and sd of the correlation MLE from ``m`` min-max rectangles of ``n`` points."""
    table = ResultTable("table1")
    rng = np.random.default_rng(config.seed)
    for rho in config.rhos:
        for n in config.ns:
            est = []
            for _ in range(config.replicates):
                syms = [
                    build_minmax_rectangle(simulate_bivariate(rho, n, rng, config.mu, config.sd))
                    for _ in range(config.m)
                ]
                est.append(fit_rho_mle(syms, config.profile, (config.mu, config.sd)))
            est = np.array(est)
            table.add({"rho": rho, "m": config.m, "n": n}, "rho_hat", est.mean(), est.std(ddof=1))
    return table


# ---------------------------------------------------------------------------
# path sampler vs Taylor, Poisson vs bias corrected


@dataclass
class EstimatorConfig:
    dims: Sequence[int] = (2, 3, 5)
    replicates: int = 200
    n: int = 100
    T: int = 100
    M: int = 2000
    half_width: float = 2.0
    lam: float = 3.0
    gamma: float = 0.97
    oracle_M: int = 0
    poisson: bool = True
    seed: int = 2


def equicorrelated(d: int) -> np.ndarray:
    return 0.5 * np.eye(d) + 0.5 * np.ones((d, d))


def run_estimator_comparison(config: EstimatorConfig = EstimatorConfig()) -> ResultTable:
    """Replicate estimates of ``n log P(B)`` for ``N(0, 0.5 I + 0.5 11^T)`` on ``[-h, h]^d``.

    Reports mean, variance and time of the path and Taylor estimators of the
    log-likelihood and, with ``poisson``, of ``log |L|`` for the Poisson
    estimator (fed with Taylor replicates) and the bias-corrected estimator.
    ``oracle_M > 0`` adds an SOV reference value with that many draws; the
    deterministic box probability is always reported.
    """
    table = ResultTable("estimators")
    rng = np.random.default_rng(config.seed)
    pcfg = PoissonConfig(config.lam, config.gamma, "marginal_cdf")
    for d in config.dims:
        model = GaussianModel(d)
        params = MvnParams.from_cov(np.zeros(d), equicorrelated(d))
        lower, upper = -config.half_width * np.ones(d), config.half_width * np.ones(d)
        symbol = RectangleSymbol(lower, upper, config.n, np.empty((0, d)), np.empty((0, d)))
        ladder = TemperatureLadder(config.T)
        setting = {"d": d}
        exact = config.n * math.log(mvn_box_probability(params.mu, params.sigma, lower, upper))
        table.add(setting, "reference", exact)
        if config.oracle_M:
            st = UniformBlockStore.random(config.oracle_M, d, 1, rng)
            oracle = sov_truncated_normal(params.mu, params.sigma, lower, upper, st)
            table.add(setting, "sov_oracle", config.n * math.log(oracle.value),
                      config.n * oracle.standard_error / oracle.value)

        path, taylor, t_path, t_taylor = [], [], 0.0, 0.0
        for _ in range(config.replicates):
            st = UniformBlockStore.random(config.T * config.M, 4 * (d + 1), config.T, rng)
            t0 = time.perf_counter()
            path.append(path_sampler_log_integral(model, params, symbol, ladder, config.M, st).value)
            t_path += time.perf_counter() - t0
            st = UniformBlockStore.random(config.M, d, 1, rng)
            t0 = time.perf_counter()
            taylor.append(
                taylor_log_integral(sov_truncated_normal(params.mu, params.sigma, lower, upper, st), config.n)
            )
            t_taylor += time.perf_counter() - t0
        path = np.array(path)
        tvals = np.array([e.value for e in taylor])
        table.add(setting, "path_mean", path.mean(), path.std(ddof=1) / math.sqrt(path.size))
        table.add(setting, "path_var", path.var(ddof=1))
        table.add(setting, "path_time", t_path)
        table.add(setting, "taylor_mean", tvals.mean(), tvals.std(ddof=1) / math.sqrt(tvals.size))
        table.add(setting, "taylor_var", tvals.var(ddof=1))
        table.add(setting, "taylor_time", t_taylor)
        table.add(setting, "time_ratio", t_taylor / t_path)

        if config.poisson:
            a = soft_lower_bound(symbol, model, params, pcfg)
            bc = np.array([bias_corrected_exp(e).log_abs for e in taylor])
            pois, signs, t_pois = [], [], 0.0
            for _ in range(config.replicates):
                t0 = time.perf_counter()

                def replicate(h):
                    st = UniformBlockStore.random(config.M, d, 1, rng)
                    est = sov_truncated_normal(params.mu, params.sigma, lower, upper, st)
                    return taylor_log_integral(est, config.n).value

                out = poisson_estimator(replicate, a, rng.random(), pcfg)
                t_pois += time.perf_counter() - t0
                pois.append(out.log_abs)
                signs.append(out.sign)
            pois = np.array(pois)
            table.add(setting, "pois_mean", pois.mean())
            table.add(setting, "pois_var", pois.var(ddof=1))
            table.add(setting, "pois_negative_fraction", np.mean(np.array(signs) < 0))
            table.add(setting, "pois_time", t_pois)
            table.add(setting, "bc_mean", bc.mean())
            table.add(setting, "bc_var", bc.var(ddof=1))
    return table


# ---------------------------------------------------------------------------
# factor model


@dataclass
class FactorConfig:
    d: int = 3
    k: int = 1
    n: int = 50_000
    q: float = 0.005
    iterations: int = 10_000
    replicates: int = 3
    M: int = 500
    estimator: str = "approximate"
    T: int = 20
    M_path: int = 50
    lam: float = 3.0
    gamma: float = 0.97
    run_full: bool = True
    seed: int = 3


def make_factor_data(d: int, n: int, rng, k: int = 1) -> tuple[FactorParams, np.ndarray]:
    """``mu`` evenly spaced on [-1, 1], ``log D ~ U(0, 0.25)``, lower-triangular ``L ~ U(-0.5, 0.5)``."""
    mu = np.linspace(-1.0, 1.0, d)
    D = np.exp(rng.uniform(0.0, 0.25, d))
    L = np.tril(rng.uniform(-0.5, 0.5, (d, k)))
    params = FactorParams(mu, L, D)
    return params, FactorModel(d, k).simulate(params, n, rng)


def _factor_start(model: FactorModel, symbol: RectangleSymbol) -> np.ndarray:
    """Crude start from the box alone: centre for ``mu``, width-matched noise, zero loadings."""
    from scipy.special import ndtri

    z = ndtri(1.0 - max(symbol.q, 0.5 / symbol.n_total))
    sd = (symbol.upper - symbol.lower) / (2.0 * z)
    L = np.zeros((model.dim, model.n_factors))
    L[model._lidx] = 0.1
    D = np.maximum(sd**2 - np.sum(L**2, axis=1), 1e-2)
    return model.pack(FactorParams(0.5 * (symbol.lower + symbol.upper), L, D))


def _lower_sigma(model, theta):
    s = model.unpack(theta).sigma
    return s[np.tril_indices(model.dim)]


def run_factor_experiment(config: FactorConfig = FactorConfig()) -> ResultTable:
    """SDA versus full-data posterior means for the factor model."""
    table = ResultTable("factor")
    rng = np.random.default_rng(config.seed)
    model = FactorModel(config.d, config.k)
    mcfg = MCMCConfig(iterations=config.iterations)
    if config.estimator == "approximate":
        estimator = ApproximateEstimator(M=config.M)
    elif config.estimator == "exact":
        estimator = ExactEstimator(config.T, config.M_path, PoissonConfig(config.lam, config.gamma))
    else:
        raise ValueError(f"unknown estimator {config.estimator!r}")
    for r in range(config.replicates):
        truth, y = make_factor_data(config.d, config.n, rng, config.k)
        true_sigma = truth.sigma[np.tril_indices(config.d)]
        setting = {"replicate": r, "d": config.d, "n": config.n, "q": config.q, "estimator": config.estimator}
        t0 = time.perf_counter()
        symbol = build_quantile_rectangle(y, config.q)
        prep = time.perf_counter() - t0
        start = _factor_start(model, symbol)
        chain = signed_block_pmmh(SymbolicTarget(model, [symbol], estimator), start, mcfg, rng=rng)
        mu_hat = signed_expectation(chain, lambda th: th[: config.d])
        sig_hat = signed_expectation(chain, lambda th: _lower_sigma(model, th))
        table.add(setting, "ne_over_n", symbol.n_e / config.n)
        table.add(setting, "sda_rmse_mu", rmse(mu_hat, truth.mu))
        table.add(setting, "sda_rmse_sigma", rmse(sig_hat, true_sigma))
        table.add(setting, "sda_time", prep + chain.elapsed)
        table.add(setting, "sda_accept", chain.acceptance_rate)
        table.add(setting, "sda_negative_fraction", chain.negative_sign_fraction)
        if config.run_full:
            full = signed_block_pmmh(FullDataTarget(model, y), start, mcfg, rng=rng)
            fmu = signed_expectation(full, lambda th: th[: config.d])
            fsig = signed_expectation(full, lambda th: _lower_sigma(model, th))
            table.add(setting, "full_rmse_mu", rmse(fmu, truth.mu))
            table.add(setting, "full_rmse_sigma", rmse(fsig, true_sigma))
            table.add(setting, "full_time", full.elapsed)
            table.add(setting, "full_accept", full.acceptance_rate)
            table.add(setting, "ratio_rmse_mu", rmse(mu_hat, truth.mu) / rmse(fmu, truth.mu))
            table.add(setting, "ratio_rmse_sigma", rmse(sig_hat, true_sigma) / rmse(fsig, true_sigma))
            table.add(setting, "ratio_time", (prep + chain.elapsed) / full.elapsed)
    return table


# ---------------------------------------------------------------------------
# heteroscedastic regression on synthetic carrier groups


def load_flight_groups(path=None) -> dict:
    """Stored synthetic group parameters (14 carrier-like groups)."""
    if path is None:
        text = resources.files("symlik").joinpath("data/flight_groups.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


@dataclass
class RegressionConfig:
    groups: Sequence[int] = (0, 2, 4)
    n_per_group: int = 100_000
    qs: Sequence[float] = (0.01, 0.05, 0.1)
    iterations: int = 6_000
    M: int = 200
    K_max: int = 5
    min_count: int = 4_000
    em_rows: Optional[int] = 10_000
    em_restarts: int = 2
    em_tol: float = 1e-6
    seed: int = 4


def make_flight_data(info: dict, groups: Sequence[int], n_per_group: int, rng):
    """Simulate ``(y, x1, x2)`` rows and group labels from the stored group parameters.

    Returns rows, labels (0..G-1), the true parameters and the per-group
    centring constants of ``x2``.
    """
    rows, labels, x2_means = [], [], []
    intercepts = []
    for j, g in enumerate(groups):
        gs = info["groups"][g]
        mix = NormalMixture.from_dict(gs["mixture"])
        n = int(round(n_per_group * gs["share"]))
        x, _ = mix.sample(n, rng)
        rows.append(x)
        labels.append(np.full(n, j))
        x2_means.append(float(x[:, 1].mean()))
        intercepts.append(gs["intercept"])
    truth = HeteroRegParams(np.array(intercepts), info["beta1"], info["beta2"], info["alpha0"], info["alpha1"])
    model = HeteroRegressionModel(x2_means)
    out = []
    for j, x in enumerate(rows):
        y = model.simulate(truth, x, j, rng)
        out.append(np.column_stack([y, x]))
    return np.concatenate(out), np.concatenate(labels), truth, np.array(x2_means)


def _regression_start(model, symbols, n_groups) -> np.ndarray:
    """Least squares on the rows kept at full resolution (boundary and external)."""
    pts, grp = [], []
    for s in symbols:
        for block in (s.boundary_points, s.external_points):
            pts.append(block)
            grp.append(np.full(block.shape[0], s.group))
    pts = np.concatenate(pts)
    grp = np.concatenate(grp).astype(int)
    X = np.column_stack([np.eye(n_groups)[grp], pts[:, 1], pts[:, 2]])
    coef, *_ = np.linalg.lstsq(X, pts[:, 0], rcond=None)
    resid = pts[:, 0] - X @ coef
    return np.r_[coef, math.log(np.var(resid)), 0.0]


def run_regression_experiment(config: RegressionConfig = RegressionConfig()) -> ResultTable:
    """SDA versus full-data posterior means over a grid of ``q``.

    Mixture fitting and rectangle construction count as preparation time of
    the SDA analysis.
    """
    table = ResultTable("regression")
    rng = np.random.default_rng(config.seed)
    info = load_flight_groups()
    rows, labels, truth, x2_means = make_flight_data(info, config.groups, config.n_per_group, rng)
    G = len(config.groups)
    mcfg = MCMCConfig(iterations=config.iterations)

    t0 = time.perf_counter()
    mixtures, Ks = {}, []
    for j in range(G):
        x = rows[labels == j, 1:]
        K, fit = select_K(
            x,
            config.K_max,
            config.min_count,
            seed=config.seed + j,
            return_fit=True,
            max_rows=config.em_rows,
            restarts=config.em_restarts,
            tol=config.em_tol,
        )
        mixtures[j] = fit.mixture
        Ks.append(K)
    fit_time = time.perf_counter() - t0
    model = HeteroRegressionModel(x2_means, mixtures)
    full_model = HeteroRegressionModel(x2_means)

    sym_by_q, prep_by_q = {}, {}
    for q in config.qs:
        t0 = time.perf_counter()
        syms = []
        for j in range(G):
            sel = labels == j
            rs = build_component_rectangles(
                rows[sel, 0], rows[sel, 1:], q=q, mixture=mixtures[j], min_count=config.min_count, group=j
            )
            syms.extend(rs.symbols)
        sym_by_q[q] = syms
        prep_by_q[q] = fit_time + time.perf_counter() - t0

    start = _regression_start(model, sym_by_q[min(config.qs)], G)
    # every chain replays the same proposal stream; u has its own stream
    chain_seed = int(rng.integers(2**63))
    full = signed_block_pmmh(FullDataTarget(full_model, rows, groups=labels), start, mcfg, rng=chain_seed)
    full_mean = signed_expectation(full)
    table.add({"q": "full"}, "time_total", full.elapsed)
    table.add({"q": "full"}, "accept", full.acceptance_rate)
    table.add({"q": "full"}, "rmse_truth", rmse(full_mean, model.pack(truth)))
    for j, K in enumerate(Ks):
        table.add({"group": config.groups[j]}, "K", K)

    for q in config.qs:
        syms = sym_by_q[q]
        estimator = ApproximateEstimator(M=config.M)
        chain = signed_block_pmmh(
            SymbolicTarget(model, syms, estimator), start, mcfg, rng=chain_seed, store_rng=rng
        )
        sda_mean = signed_expectation(chain)
        n_e = sum(s.n_e for s in syms)
        setting = {"q": q}
        table.add(setting, "ne_over_n", n_e / rows.shape[0])
        table.add(setting, "n_rectangles", len(syms))
        table.add(setting, "rmse", rmse(sda_mean, full_mean))
        table.add(setting, "mape", mape(full_mean, sda_mean))
        table.add(setting, "time_prep", prep_by_q[q])
        table.add(setting, "time_mcmc", chain.elapsed)
        table.add(setting, "time_total", prep_by_q[q] + chain.elapsed)
        table.add(setting, "time_ratio", (prep_by_q[q] + chain.elapsed) / full.elapsed)
        table.add(setting, "accept", chain.acceptance_rate)
    return table
