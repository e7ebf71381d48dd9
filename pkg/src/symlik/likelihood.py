"""Signed likelihood estimates and assembly of the symbolic likelihood.

The likelihood of one rectangle is
``C(theta)^{n_r} * prod g(x_b) * prod g(x_e)`` with ``C`` the box
integral.  The box term is estimated by one of

* :class:`ApproximateEstimator` -- Taylor estimate of ``n_r log C`` lifted by
  the bias-corrected exponential (always positive);
* :class:`ExactEstimator` -- path-sampling replicates combined by the
  Poisson estimator (unbiased for ``C^{n_r}`` but possibly negative);
* :class:`AnalyticEstimator` -- deterministic box probability (Gaussian
  models only), for maximum likelihood and reference runs.

Everything is accumulated in log space with an explicit sign.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .integrals import (
    IntegralError,
    RejectionBudgetError,
    UniformBlockStore,
    _interval_prob,
    conditional_regression_integral,
    draw_truncated_mixture,
    mc_uniform_integral,
    mixture_box_probability,
    mvn_box_probability,
    sov_truncated_normal,
    truncnorm_ppf,
)
from .loglik import LogLikError, LogLikEstimate, TemperatureLadder, path_sampler_log_integral, taylor_log_integral
from .models import HeteroRegressionModel, ModelError
from .symbols import MixtureRectangleSet, RectangleSymbol

__all__ = [
    "LikelihoodError",
    "SignedLogLik",
    "PoissonConfig",
    "poisson_estimator",
    "soft_lower_bound",
    "bias_corrected_exp",
    "point_loglik",
    "symbolic_loglik",
    "ApproximateEstimator",
    "ExactEstimator",
    "AnalyticEstimator",
    "as_symbol_list",
]

log = logging.getLogger(__name__)

_ESTIMATION_FAILURES = (IntegralError, RejectionBudgetError, LogLikError, ModelError, FloatingPointError)


class LikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class SignedLogLik:
    """``log |L|`` and ``sign(L)``; ``log_abs = -inf`` encodes an estimate of zero."""

    log_abs: float
    sign: int = 1
    method: str = ""

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise LikelihoodError("sign must be +1 or -1")
        if math.isnan(self.log_abs) or self.log_abs == math.inf:
            raise LikelihoodError("log_abs must be finite or -inf")

    @property
    def is_zero(self) -> bool:
        return self.log_abs == -math.inf

    def __mul__(self, other: "SignedLogLik") -> "SignedLogLik":
        method = self.method if self.method == other.method else "+".join(filter(None, (self.method, other.method)))
        return SignedLogLik(self.log_abs + other.log_abs, self.sign * other.sign, method)


ZERO = SignedLogLik(-math.inf, 1, "zero")


@dataclass(frozen=True)
class PoissonConfig:
    """Settings of the Poisson estimator and its soft lower bound.

    ``bound_mode`` is ``"generic"``, ``"marginal_cdf"`` or ``"auto"``
    (marginal CDFs when the model is Gaussian).  ``max_terms`` is the number
    of path replicates pre-allocated in the random-number store.
    """

    lam: float = 3.0
    gamma: float = 0.97
    bound_mode: str = "auto"
    max_terms: int = 15

    def __post_init__(self):
        if not self.lam > 0:
            raise LikelihoodError("lambda must be positive")
        if not 0 < self.gamma <= 1:
            raise LikelihoodError("gamma must lie in (0, 1]")
        if self.bound_mode not in ("auto", "generic", "marginal_cdf"):
            raise LikelihoodError(f"unknown bound mode {self.bound_mode!r}")


def poisson_estimator(replicates, a: float, u: float, config: PoissonConfig = PoissonConfig()) -> SignedLogLik:
    """Poisson estimator of ``exp(A)`` from unbiased estimates of ``A``.

    ``exp(a + lam) prod_{h=1}^{chi} (A_h - a) / lam`` with
    ``chi = F^{-1}_{Poisson(lam)}(u)``.

    Parameters
    ----------
    replicates : callable or sequence
        ``replicates(h)`` (or ``replicates[h]``) returns the ``h``-th
        independent estimate of ``A``; only the first ``chi`` are used.
    a : float
        Soft lower bound, ideally close to ``A - lam``.
    u : float
        Uniform driving the Poisson draw.
    """
    lam = config.lam
    if not lam > 0:
        raise LikelihoodError("lambda must be positive")
    if not math.isfinite(a):
        raise LikelihoodError("the lower bound a must be finite")
    chi = int(stats.poisson.ppf(u, lam))
    get = replicates if callable(replicates) else replicates.__getitem__
    log_abs = a + lam - chi * math.log(lam)
    sign = 1
    for h in range(chi):
        diff = float(get(h)) - a
        if diff == 0.0:
            return SignedLogLik(-math.inf, 1, "poisson")
        if diff < 0:
            sign = -sign
            log.debug("replicate %d fell below the soft lower bound (A_h - a = %.3g)", h, diff)
        log_abs += math.log(abs(diff))
    return SignedLogLik(log_abs, sign, "poisson")


def _resolve_mode(config: PoissonConfig, model, params) -> str:
    if config.bound_mode != "auto":
        return config.bound_mode
    return "marginal_cdf" if model.gaussian(params) is not None else "generic"


def soft_lower_bound(symbol: RectangleSymbol, model, params, config: PoissonConfig = PoissonConfig()) -> float:
    """``a = A* - lam`` for the Poisson estimator.

    ``generic``: ``A* = n_r gamma^d d log(1 - 2q)``.
    ``marginal_cdf``: ``A* = n_r gamma^d sum_i log P(l_i < Z_i < u_i)``.
    """
    d, n_r = symbol.dim, symbol.n_r
    scale = n_r * config.gamma**d
    mode = _resolve_mode(config, model, params)
    if mode == "generic":
        if symbol.q >= 0.5:
            raise LikelihoodError("the generic bound is undefined at q = 0.5")
        a_star = scale * d * math.log1p(-2.0 * symbol.q)
        if a_star == 0.0 and n_r > 0:
            warnings.warn("generic soft bound is 0 (q = 0 or gamma = 1); the estimator may often be negative")
    else:
        a_star = scale * float(np.sum(model.marginal_log_probs(params, symbol.lower, symbol.upper)))
    return a_star - config.lam


def bias_corrected_exp(est: LogLikEstimate) -> SignedLogLik:
    """``exp(A_T - s(A_T) / 2)``, always positive."""
    if not math.isfinite(est.variance):
        raise LikelihoodError("variance must be finite")
    return SignedLogLik(est.value - 0.5 * est.variance, 1, "bc")


def point_loglik(model, params, rows, group=None) -> float:
    """Sum of micro-data log densities over rows kept at full resolution."""
    rows = np.asarray(rows, dtype=float)
    if rows.size == 0:
        return 0.0
    val = float(np.sum(model.log_density(params, rows, group)))
    if not math.isfinite(val):
        raise LikelihoodError("non-finite micro-data log density")
    return val


def as_symbol_list(symbols) -> list[RectangleSymbol]:
    if isinstance(symbols, RectangleSymbol):
        return [symbols]
    if isinstance(symbols, MixtureRectangleSet):
        return symbols.symbols
    return list(symbols)


# ---------------------------------------------------------------------------
# box-term estimators


class _BoxEstimator:
    """Common interface: store layout plus a per-symbol box term."""

    method = "box"

    def units_per_symbol(self, model, symbol) -> int:
        return 0

    def unit_width(self, model, symbol) -> int:
        return 1

    def symbol_blocks(self, model, symbol) -> list[np.ndarray]:
        """Blocks of one symbol's units (local indices)."""
        n = self.units_per_symbol(model, symbol)
        return [np.arange(n)] if n else []

    def make_store(self, symbols, model, rng=None) -> Optional[UniformBlockStore]:
        """Store for a list of symbols; block ``k`` joins block ``k`` of every symbol."""
        symbols = as_symbol_list(symbols)
        sizes = [self.units_per_symbol(model, s) for s in symbols]
        if sum(sizes) == 0:
            return None
        width = max(self.unit_width(model, s) for s, n in zip(symbols, sizes) if n)
        offsets = np.cumsum([0] + sizes[:-1])
        joined: dict[int, list[np.ndarray]] = {}
        for s, off, n in zip(symbols, offsets, sizes):
            for k, blk in enumerate(self.symbol_blocks(model, s) if n else []):
                joined.setdefault(k, []).append(blk + off)
        blocks = [np.concatenate(joined[k]) for k in sorted(joined)]
        rng = np.random.default_rng(rng)
        return UniformBlockStore.random(sum(sizes), width, blocks, rng)

    def unit_ranges(self, symbols, model) -> list[np.ndarray]:
        sizes = [self.units_per_symbol(model, s) for s in as_symbol_list(symbols)]
        offsets = np.cumsum([0] + sizes[:-1])
        return [np.arange(o, o + n) for o, n in zip(offsets, sizes)]

    def box_term(self, symbol, model, params, store, units) -> SignedLogLik:
        raise NotImplementedError


def _group(symbol):
    return symbol.group


class AnalyticEstimator(_BoxEstimator):
    """Deterministic box probability for Gaussian models."""

    method = "analytic"

    def box_term(self, symbol, model, params, store=None, units=None) -> SignedLogLik:
        g = model.gaussian(params)
        if g is None:
            raise LikelihoodError(f"{model.name} has no closed-form box probability")
        mu, chol = g
        p = mvn_box_probability(mu, chol @ chol.T, symbol.lower, symbol.upper)
        if p <= 0:
            return ZERO
        return SignedLogLik(symbol.n_r * math.log(p), 1, self.method)


class _RegressionBatch:
    """All rectangles of a regression model laid out as one particle array.

    Row ``r`` of the flat layout is particle ``r % M`` of active rectangle
    ``r // M``.  Draws follow the same uniforms, component choice and
    accept/reject order as :func:`draw_truncated_mixture`, so both paths
    give identical estimates.
    """

    def __init__(self, symbols, model, M, pool, ranges):
        self.symbols = symbols
        self.model = model
        self.mixtures = dict(model.mixtures)
        self.M, self.pool = M, pool
        active = [i for i, s in enumerate(symbols) if s.n_r > 0]
        self.active = active
        S = len(active)
        syms = [symbols[i] for i in active]
        mixes = [model.mixtures[model._group(s.group)] for s in syms]
        p = syms[0].dim - 1 if syms else 0
        self.p = p
        self.units = np.concatenate([ranges[i] for i in active]) if active else np.empty(0, int)
        self.sym = np.repeat(np.arange(S), M)
        self.lo = np.array([s.lower[1:] for s in syms]).reshape(S, p)
        self.hi = np.array([s.upper[1:] for s in syms]).reshape(S, p)
        self.ylo = np.array([s.lower[0] for s in syms])
        self.yhi = np.array([s.upper[0] for s in syms])
        self.groups = np.array([model._group(s.group) for s in syms], dtype=int)
        self.n_r = np.array([s.n_r for s in syms], dtype=float)
        self.probs = [mixture_box_probability(m, s.lower[1:], s.upper[1:]) for m, s in zip(mixes, syms)]
        self.total = np.array([pr[0] for pr in self.probs])
        K = max((m.n_components for m in mixes), default=1)
        self.n_comp = np.array([m.n_components for m in mixes], dtype=int)
        self.cum = np.full((S, K), 2.0)
        self.means = np.zeros((S, K, p))
        self.chols = np.tile(np.eye(p), (S, K, 1, 1))
        for j, (m, (tot, weighted)) in enumerate(zip(mixes, self.probs)):
            k = m.n_components
            if tot > 0:
                self.cum[j, :k] = np.cumsum(weighted / tot)
            self.means[j, :k] = m.means
            self.chols[j, :k] = m.chols
        self.mix_list = mixes
        by_group: dict[int, list] = {}
        for s in symbols:
            for pts in (s.boundary_points, s.external_points):
                if pts.size:
                    by_group.setdefault(s.group, []).append(np.asarray(pts, dtype=float))
        self.points = {g: np.concatenate(v) for g, v in by_group.items()}
        self._cache: list[tuple[np.ndarray, np.ndarray]] = []

    def matches(self, symbols, model) -> bool:
        return (
            model is self.model
            and len(symbols) == len(self.symbols)
            and all(a is b for a, b in zip(symbols, self.symbols))
            and all(model.mixtures.get(g) is m for g, m in self.mixtures.items())
        )

    def _draw(self, store, rows, vals):
        p, pool = self.p, self.pool
        n = rows.size
        sym = self.sym[rows]
        comp = np.minimum((self.cum[sym] <= vals[:, :1]).sum(axis=1), self.n_comp[sym] - 1)
        mu, L = self.means[sym, comp], self.chols[sym, comp]
        lo, hi = self.lo[sym], self.hi[sym]
        diag = np.diagonal(L, axis1=1, axis2=2)
        cand = vals[:, 1 : 1 + pool * (p + 1)].reshape(n, pool, p + 1)
        if p > 1:
            w = (hi[:, 1:] - lo[:, 1:]) / diag[:, 1:]
            bound = np.log(special.erf(w / (2.0 * np.sqrt(2.0))))
        out = np.full((n, p), np.nan)
        done = np.zeros(n, dtype=bool)
        for k in range(pool):
            act = np.flatnonzero(~done)
            if act.size == 0:
                break
            c = cand[act, k]
            La, mua = L[act], mu[act]
            y = np.empty((act.size, p))
            logp = np.empty((act.size, p))
            for i in range(p):
                shift = np.einsum("nj,nj->n", y[:, :i], La[:, i, :i])
                a = (lo[act, i] - mua[:, i] - shift) / diag[act, i]
                b = (hi[act, i] - mua[:, i] - shift) / diag[act, i]
                y[:, i], pr = truncnorm_ppf(a, b, c[:, i])
                with np.errstate(divide="ignore"):
                    logp[:, i] = np.log(pr)
            log_acc = np.sum(logp[:, 1:] - bound[act], axis=1) if p > 1 else np.zeros(act.size)
            ok = np.log(c[:, -1]) < log_acc
            out[act[ok]] = mua[ok] + np.einsum("nij,nj->ni", La[ok], y[ok])
            done[act[ok]] = True
        for i in np.flatnonzero(~done):
            j = sym[i]
            out[i], _ = draw_truncated_mixture(
                self.mix_list[j], self.lo[j], self.hi[j], store, self.units[rows[i : i + 1]], pool,
                box_probs=self.probs[j],
            )
        return out

    def draws(self, store) -> np.ndarray:
        """Predictor draws for every particle, redrawing only changed units."""
        vals = store.values[self.units]
        best, changed = None, None
        for e in self._cache:
            if e[0].shape != vals.shape:
                continue
            diff = np.flatnonzero(np.any(vals != e[0], axis=1))
            if best is None or diff.size < changed.size:
                best, changed = e, diff
        if best is None:
            x = self._draw(store, np.arange(self.units.size), vals)
        else:
            if changed.size == 0:
                return best[1]
            x = best[1].copy()
            x[changed] = self._draw(store, changed, vals[changed])
        entry = (vals, x)
        self._cache = [entry] + ([best] if best is not None else self._cache[:1])
        return x

    def loglik(self, params, store, method) -> "SignedLogLik":
        model = self.model
        total = 0.0
        if self.active:
            if np.any(self.total <= 0):
                return ZERO
            try:
                x = self.draws(store)
            except _ESTIMATION_FAILURES as err:
                log.debug("box term failed: %s", err)
                return ZERO
            g = self.groups[self.sym]
            mean = params.intercepts[g] + params.beta1 * x[:, 0] + params.beta2 * x[:, 1]
            sd = np.exp(0.5 * (params.alpha0 + params.alpha1 * (x[:, 1] - model.x2_means[g])))
            phi = _interval_prob((self.ylo[self.sym] - mean) / sd, (self.yhi[self.sym] - mean) / sd)
            reps = (self.total[self.sym] * phi).reshape(len(self.active), self.M)
            if np.any(~(reps > 0)):
                return ZERO
            logs = np.log(reps)
            avg = reps.mean(axis=1)
            value = self.n_r * (logs.mean(axis=1) + reps.var(axis=1, ddof=1) / (2.0 * avg * avg))
            variance = self.n_r**2 * logs.var(axis=1, ddof=1) / self.M
            total = float(np.sum(value - 0.5 * variance))
        for grp, rows in self.points.items():
            total += point_loglik(model, params, rows, grp)
        return SignedLogLik(total, 1, method)


class ApproximateEstimator(_BoxEstimator):
    """Taylor estimate of ``n_r log C`` with the bias-corrected exponential.

    ``C`` is estimated from ``M`` particles: SOV for Gaussian models, the
    conditional regression integral for models with a predictor mixture,
    and plain Monte Carlo otherwise.  By default each particle forms its own
    block (``U = M``); ``n_blocks`` groups particles into fewer blocks.
    """

    method = "approximate"

    def __init__(self, M: int = 2000, n_blocks: Optional[int] = None, pool: int = 4):
        if M < 2:
            raise LikelihoodError("M must be at least 2")
        self.M = int(M)
        self.n_blocks = self.M if n_blocks is None else int(n_blocks)
        if not 1 <= self.n_blocks <= self.M:
            raise LikelihoodError("n_blocks must lie in [1, M]")
        self.pool = pool
        self._draw_cache: dict[int, tuple] = {}
        self._batch: Optional[_RegressionBatch] = None

    def _predictor_draws(self, symbol, mix, store, units):
        """Truncated-mixture draws, recomputed only for units whose uniforms changed.

        The two most recent states are kept per symbol, so alternating
        between a current and a candidate store costs at most one redraw.
        """
        vals = store.values[units]
        lo, hi = symbol.lower[1:], symbol.upper[1:]
        entries = [
            e for e in self._draw_cache.get(id(symbol), [])
            if e[0] is symbol and e[1] is mix and e[2].shape == vals.shape
        ]
        best, changed = None, None
        for e in entries:
            diff = np.flatnonzero(np.any(vals != e[2], axis=1))
            if best is None or diff.size < changed.size:
                best, changed = e, diff
        if best is None:
            probs = mixture_box_probability(mix, lo, hi)
            x, total = draw_truncated_mixture(mix, lo, hi, store, units, self.pool, box_probs=probs)
        else:
            _, _, _, x, total, probs = best
            if changed.size == 0:
                return x, total
            x = x.copy()
            x[changed], _ = draw_truncated_mixture(mix, lo, hi, store, units[changed], self.pool, box_probs=probs)
        entry = (symbol, mix, vals, x, total, probs)
        self._draw_cache[id(symbol)] = [entry] + entries[:1] if best is None else [entry, best]
        return x, total

    @staticmethod
    def _is_regression(model) -> bool:
        return hasattr(model, "conditional_moments") and bool(getattr(model, "mixtures", None))

    def units_per_symbol(self, model, symbol) -> int:
        return self.M if symbol.n_r > 0 else 0

    def unit_width(self, model, symbol) -> int:
        if self._is_regression(model):
            return 1 + self.pool * symbol.dim
        return symbol.dim

    def symbol_blocks(self, model, symbol):
        if self.units_per_symbol(model, symbol) == 0:
            return []
        return np.array_split(np.arange(self.M), self.n_blocks)

    def supports_batch(self, model) -> bool:
        return isinstance(model, HeteroRegressionModel) and bool(model.mixtures)

    def batch_loglik(self, symbols, model, params, store, ranges) -> SignedLogLik:
        """Whole symbolic log-likelihood for a regression model in one vectorised pass."""
        if self._batch is None or not self._batch.matches(symbols, model):
            self._batch = _RegressionBatch(symbols, model, self.M, self.pool, ranges)
        return self._batch.loglik(params, store, self.method)

    def integral(self, symbol, model, params, store, units):
        if self._is_regression(model):
            mix = model.mixtures[model._group(symbol.group)]
            draws = self._predictor_draws(symbol, mix, store, units)
            return conditional_regression_integral(
                model, params, mix, symbol, store, units, symbol.group, self.pool, draws
            )
        g = model.gaussian(params)
        if g is not None:
            mu, chol = g
            return sov_truncated_normal(mu, None, symbol.lower, symbol.upper, store, units, chol=chol)
        return mc_uniform_integral(model, params, symbol, store, units, symbol.group)

    def log_estimate(self, symbol, model, params, store, units) -> LogLikEstimate:
        est = self.integral(symbol, model, params, store, units)
        return taylor_log_integral(est, symbol.n_r)

    def box_term(self, symbol, model, params, store, units) -> SignedLogLik:
        if symbol.n_r == 0:
            return SignedLogLik(0.0, 1, self.method)
        try:
            est = self.log_estimate(symbol, model, params, store, units)
        except _ESTIMATION_FAILURES as err:
            log.debug("box term failed: %s", err)
            return ZERO
        out = bias_corrected_exp(est)
        return SignedLogLik(out.log_abs, 1, self.method)


class ExactEstimator(_BoxEstimator):
    """Path-sampling replicates of ``n_r log C`` fed to the Poisson estimator.

    Store layout per symbol: unit 0 holds the uniform of the Poisson draw,
    followed by ``max_terms`` path replicates of ``T * M`` units each
    (temperature-major).  Replicates beyond ``max_terms`` are generated from
    the overflow stream of unit 0.

    ``blocking="temperature"`` makes one block per temperature (across
    replicates); ``"particle"`` one block per particle index.  The Poisson
    uniform always forms its own block.
    """

    method = "exact"

    def __init__(
        self,
        T: int = 20,
        M: int = 100,
        config: PoissonConfig = PoissonConfig(),
        blocking: str = "temperature",
        exponent: float = 5.0,
        pool: int = 4,
    ):
        if blocking not in ("temperature", "particle"):
            raise LikelihoodError(f"unknown blocking {blocking!r}")
        self.ladder = TemperatureLadder(T, exponent)
        self.M = int(M)
        self.config = config
        self.blocking = blocking
        self.pool = pool

    @property
    def _per_replicate(self) -> int:
        return self.ladder.T * self.M

    def units_per_symbol(self, model, symbol) -> int:
        return 1 + self.config.max_terms * self._per_replicate if symbol.n_r > 0 else 0

    def unit_width(self, model, symbol) -> int:
        return self.pool * (symbol.dim + 1)

    def symbol_blocks(self, model, symbol):
        if self.units_per_symbol(model, symbol) == 0:
            return []
        T, M, H = self.ladder.T, self.M, self.config.max_terms
        idx = 1 + np.arange(H * T * M).reshape(H, T, M)
        if self.blocking == "temperature":
            rest = [idx[:, i, :].ravel() for i in range(T)]
        else:
            rest = [idx[:, :, m].ravel() for m in range(M)]
        return [np.array([0])] + rest

    def replicate_source(self, symbol, model, params, store, units) -> Callable[[int], float]:
        per = self._per_replicate
        H = self.config.max_terms
        extra: list[UniformBlockStore] = []
        overflow = None

        def replicate(h: int) -> float:
            nonlocal overflow
            if h < H:
                s, un = store, units[1 + h * per : 1 + (h + 1) * per]
            else:
                if overflow is None:
                    overflow = store.overflow_rng(units[0])
                while len(extra) <= h - H:
                    extra.append(UniformBlockStore.random(per, store.width, 1, overflow))
                s, un = extra[h - H], None
            return path_sampler_log_integral(
                model, params, symbol, self.ladder, self.M, s, un, symbol.n_r, symbol.group, self.pool
            ).value

        return replicate

    def box_term(self, symbol, model, params, store, units) -> SignedLogLik:
        if symbol.n_r == 0:
            return SignedLogLik(0.0, 1, self.method)
        try:
            a = soft_lower_bound(symbol, model, params, self.config)
            source = self.replicate_source(symbol, model, params, store, units)
            out = poisson_estimator(source, a, store.values[units[0], 0], self.config)
        except _ESTIMATION_FAILURES as err:
            log.debug("box term failed: %s", err)
            return ZERO
        return SignedLogLik(out.log_abs, out.sign, self.method)


# ---------------------------------------------------------------------------
# assembly


def symbolic_loglik(
    symbols,
    model,
    params,
    estimator: Optional[_BoxEstimator] = None,
    store: Optional[UniformBlockStore] = None,
    batch: bool = True,
) -> SignedLogLik:
    """Signed log of the symbolic likelihood summed over rectangles.

    Per rectangle: estimated box term plus the log densities of its boundary
    and external rows.  Terms add in log space and signs multiply.
    Estimators offering a vectorised path for the model use it unless
    ``batch`` is False; the result is the same up to rounding.
    """
    symbols = as_symbol_list(symbols)
    estimator = estimator or ApproximateEstimator()
    dim = getattr(model, "dim", None)
    for s in symbols:
        if dim is not None and s.dim != dim:
            raise LikelihoodError(f"symbol dimension {s.dim} does not match the model ({dim})")
    if store is None:
        store = estimator.make_store(symbols, model)
    ranges = estimator.unit_ranges(symbols, model)
    if batch and getattr(estimator, "supports_batch", lambda m: False)(model):
        return estimator.batch_loglik(symbols, model, params, store, ranges)
    total = SignedLogLik(0.0, 1, estimator.method)
    for s, units in zip(symbols, ranges):
        term = estimator.box_term(s, model, params, store, units)
        if term.is_zero:
            return SignedLogLik(-math.inf, 1, estimator.method)
        pts = point_loglik(model, params, s.boundary_points, s.group)
        pts += point_loglik(model, params, s.external_points, s.group)
        total = total * SignedLogLik(term.log_abs + pts, term.sign, estimator.method)
    return total
