"""Signed block pseudo-marginal Metropolis-Hastings.

Each Metropolis-within-Gibbs step refreshes one randomly chosen block of the
random numbers ``u`` together with a random-walk proposal for one parameter
block, and accepts on the absolute value of the likelihood estimate.  The
sign of the current estimate is recorded so that posterior expectations can
be re-weighted afterwards (:func:`signed_expectation`).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .integrals import UniformBlockStore, block_update
from .likelihood import ApproximateEstimator, SignedLogLik, symbolic_loglik
from .models import ModelError

__all__ = [
    "SamplerError",
    "SignedDraw",
    "NormalPrior",
    "AdaptiveProposal",
    "MCMCConfig",
    "SymbolicTarget",
    "FullDataTarget",
    "FunctionTarget",
    "Chain",
    "signed_block_pmmh",
    "signed_expectation",
    "effective_sample_size",
]


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SignedDraw:
    theta: np.ndarray
    log_abs_lik: float
    sign: int
    accepted: bool


@dataclass(frozen=True)
class NormalPrior:
    """Independent normal prior on the unconstrained parameter vector."""

    mean: float | np.ndarray = 0.0
    sd: float | np.ndarray = 10.0

    def log_density(self, theta) -> float:
        z = (np.asarray(theta, dtype=float) - self.mean) / self.sd
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(np.broadcast_to(self.sd, z.shape))) - 0.5 * z.size * math.log(2 * math.pi))

    def sample(self, n: int, dim: int, rng) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal((n, dim))


class AdaptiveProposal:
    """Gaussian random walk with Haario covariance and Robbins-Monro scaling.

    The proposal covariance is ``exp(2 log_scale) * C`` where ``C`` is
    ``init_var * I`` until ``adapt_start`` updates have been seen and the
    running empirical covariance of the chain (plus jitter) afterwards.
    ``log_scale`` starts at ``log(2.38 / sqrt(p))`` and moves by
    ``c (alpha - target) / (i + i0)`` after every step, with
    ``c = 1 / (target (1 - target))`` and ``i0`` chosen so that the first
    move is at most ``first_step``.
    """

    def __init__(
        self,
        dim: int,
        target_accept: float = 0.234,
        init_var: float = 0.01,
        adapt_start: int = 200,
        jitter: float = 1e-9,
        first_step: float = 0.1,
        adapt: bool = True,
    ):
        if not 0 < target_accept < 1:
            raise SamplerError("target acceptance must lie in (0, 1)")
        self.dim = int(dim)
        self.target = target_accept
        self.init_var = init_var
        self.adapt_start = adapt_start
        self.jitter = jitter
        self.adapt = adapt
        self.c = 1.0 / (target_accept * (1.0 - target_accept))
        self.i0 = self.c * max(target_accept, 1.0 - target_accept) / first_step - 1.0
        self.log_scale = math.log(2.38 / math.sqrt(self.dim))
        self.n = 0
        self.mean = np.zeros(self.dim)
        self._m2 = np.zeros((self.dim, self.dim))
        self._chol = np.sqrt(init_var) * np.eye(self.dim)

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    @property
    def cov(self) -> np.ndarray:
        """Covariance the random walk currently uses (before scaling)."""
        if self.adapt and self.n >= self.adapt_start:
            return self._m2 / (self.n - 1) + self.jitter * np.eye(self.dim)
        return self.init_var * np.eye(self.dim)

    def propose(self, x, rng) -> np.ndarray:
        return np.asarray(x, dtype=float) + self.scale * (self._chol @ rng.standard_normal(self.dim))

    def update(self, x, accept_prob: float) -> None:
        """Record the current state and the acceptance probability of the last step."""
        if not self.adapt:
            return
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + np.outer(delta, x - self.mean)
        self.log_scale += self.c * (accept_prob - self.target) / (self.n + self.i0)
        if self.n >= self.adapt_start:
            try:
                self._chol = np.linalg.cholesky(self.cov)
            except np.linalg.LinAlgError:
                pass


@dataclass
class MCMCConfig:
    """Sampler settings.  ``burn_in=None`` discards the first half."""

    iterations: int = 10_000
    burn_in: Optional[int] = None
    blocks: Optional[Sequence[Sequence[int]]] = None
    target_accept: float = 0.234
    adapt_start: int = 200
    init_var: float = 0.01
    adapt: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise SamplerError("iterations must be positive")
        if self.burn_in is not None and not 0 <= self.burn_in < self.iterations:
            raise SamplerError("burn_in must lie in [0, iterations)")

    @property
    def discard(self) -> int:
        return self.iterations // 2 if self.burn_in is None else self.burn_in


# ---------------------------------------------------------------------------
# targets


class SymbolicTarget:
    """Symbolic likelihood of a set of rectangles under ``model``."""

    def __init__(self, model, symbols, estimator=None):
        self.model = model
        self.symbols = symbols
        self.estimator = estimator or ApproximateEstimator()

    @property
    def param_blocks(self):
        return self.model.param_blocks()

    @property
    def param_names(self):
        return self.model.param_names()

    def make_store(self, rng) -> Optional[UniformBlockStore]:
        return self.estimator.make_store(self.symbols, self.model, rng)

    def log_lik(self, theta, store) -> SignedLogLik:
        try:
            params = self.model.unpack(theta)
        except ModelError:
            return SignedLogLik(-math.inf, 1, "invalid")
        return symbolic_loglik(self.symbols, self.model, params, self.estimator, store)


class FullDataTarget:
    """Exact micro-data likelihood; ``groups`` labels rows of grouped models."""

    def __init__(self, model, rows, group=None, groups=None):
        self.model = model
        self.rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if groups is not None:
            groups = np.asarray(groups).ravel()
            self._parts = [(g, self.rows[groups == g]) for g in np.unique(groups)]
        else:
            self._parts = [(group, self.rows)]

    @property
    def param_blocks(self):
        return self.model.param_blocks()

    @property
    def param_names(self):
        return self.model.param_names()

    def make_store(self, rng):
        return None

    def log_lik(self, theta, store=None) -> SignedLogLik:
        try:
            params = self.model.unpack(theta)
            val = sum(float(np.sum(self.model.log_density(params, r, g))) for g, r in self._parts)
        except ModelError:
            return SignedLogLik(-math.inf, 1, "invalid")
        if not math.isfinite(val):
            return SignedLogLik(-math.inf, 1, "full")
        return SignedLogLik(val, 1, "full")


class FunctionTarget:
    """Wraps ``fn(theta) -> log-likelihood`` (a float or a :class:`SignedLogLik`)."""

    def __init__(self, fn: Callable, dim: int, blocks=None, names=None):
        self.fn = fn
        self.dim = dim
        self.param_blocks = blocks or [np.arange(dim)]
        self.param_names = names or [f"theta{i}" for i in range(dim)]

    def make_store(self, rng):
        return None

    def log_lik(self, theta, store=None) -> SignedLogLik:
        out = self.fn(theta)
        if isinstance(out, SignedLogLik):
            return out
        out = float(out)
        return SignedLogLik(out if math.isfinite(out) else -math.inf, 1, "function")


# ---------------------------------------------------------------------------
# chain


@dataclass
class Chain:
    theta: np.ndarray
    log_abs_lik: np.ndarray
    sign: np.ndarray
    accepted: np.ndarray
    names: list[str]
    burn_in: int
    elapsed: float = 0.0
    proposals: list = field(default_factory=list, repr=False)

    def __len__(self):
        return self.theta.shape[0]

    def __getitem__(self, i) -> SignedDraw:
        return SignedDraw(self.theta[i], float(self.log_abs_lik[i]), int(self.sign[i]), bool(self.accepted[i].any()))

    @property
    def kept(self) -> slice:
        return slice(self.burn_in, None)

    @property
    def acceptance_rate(self) -> float:
        """Fraction of accepted block steps over the whole run."""
        return float(self.accepted.mean())

    @property
    def negative_sign_fraction(self) -> float:
        return float(np.mean(self.sign[self.kept] < 0))

    def posterior_mean(self) -> np.ndarray:
        return signed_expectation(self, lambda th: th)

    def ess(self) -> np.ndarray:
        return np.array([effective_sample_size(c) for c in self.theta[self.kept].T])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *self.names, "log_abs_lik", "sign", "accepted"])
            for i in range(len(self)):
                w.writerow([i, *self.theta[i].tolist(), self.log_abs_lik[i], int(self.sign[i]), int(self.accepted[i].sum())])


def signed_expectation(chain, psi: Callable = lambda th: th, signs=None):
    """``sum psi(theta_i) s_i / sum s_i`` over the kept draws.

    ``chain`` is a :class:`Chain` (burn-in dropped) or an array of draws
    together with ``signs``.
    """
    if isinstance(chain, Chain):
        thetas, signs = chain.theta[chain.kept], chain.sign[chain.kept]
    else:
        thetas = np.asarray(chain, dtype=float)
        signs = np.ones(len(thetas)) if signs is None else np.asarray(signs, dtype=float)
    total = float(np.sum(signs))
    if total == 0:
        raise SamplerError("the signs sum to zero; the signed expectation is undefined")
    vals = np.array([np.asarray(psi(th), dtype=float) for th in thetas])
    return np.tensordot(signs, vals, axes=(0, 0)) / total


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of autocorrelation pairs."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))


def signed_block_pmmh(
    target, theta0, config: MCMCConfig = MCMCConfig(), prior=None, rng=None, store=None, store_rng=None
) -> Chain:
    """Run the signed block pseudo-marginal sampler.

    Parameters
    ----------
    target : SymbolicTarget, FullDataTarget or FunctionTarget
    theta0 : array_like
        Starting point on the unconstrained scale.
    config : MCMCConfig
    prior : object with ``log_density(theta)``; defaults to ``NormalPrior()``.
    rng : seed or Generator
    store : UniformBlockStore, optional
        Initial random numbers; drawn from ``store_rng`` when omitted.
    store_rng : seed or Generator, optional
        Stream for the random numbers ``u`` and their block updates.  Defaults
        to ``rng``; a separate stream lets chains on different targets share
        the same proposal and acceptance draws.

    Raises
    ------
    SamplerError
        When the likelihood estimate at ``theta0`` is zero or non-finite.
    """
    rng = np.random.default_rng(rng)
    store_rng = rng if store_rng is None else np.random.default_rng(store_rng)
    prior = prior or NormalPrior()
    theta = np.asarray(theta0, dtype=float).copy()
    blocks = [np.asarray(b, dtype=np.intp) for b in (config.blocks or target.param_blocks)]
    proposals = [
        AdaptiveProposal(b.size, config.target_accept, config.init_var, config.adapt_start, adapt=config.adapt)
        for b in blocks
    ]
    if store is None:
        store = target.make_store(store_rng)
    current = target.log_lik(theta, store)
    log_prior = prior.log_density(theta)
    if current.is_zero or not math.isfinite(log_prior):
        raise SamplerError("the likelihood estimate at the initial value is zero or non-finite")

    N = config.iterations
    out_theta = np.empty((N, theta.size))
    out_ll = np.empty(N)
    out_sign = np.empty(N, dtype=np.int8)
    out_acc = np.zeros((N, len(blocks)), dtype=bool)
    start = time.perf_counter()
    for it in range(N):
        for k, (idx, prop) in enumerate(zip(blocks, proposals)):
            cand = theta.copy()
            cand[idx] = prop.propose(theta[idx], rng)
            cand_store = (
                block_update(store, int(store_rng.integers(store.n_blocks)), store_rng) if store is not None else None
            )
            cand_prior = prior.log_density(cand)
            if math.isfinite(cand_prior):
                new = target.log_lik(cand, cand_store)
                log_ratio = new.log_abs + cand_prior - current.log_abs - log_prior
            else:
                new, log_ratio = None, -math.inf
            accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
            if rng.random() < accept_prob:
                theta, store, current, log_prior = cand, cand_store, new, cand_prior
                out_acc[it, k] = True
            prop.update(theta[idx], accept_prob)
        out_theta[it] = theta
        out_ll[it] = current.log_abs
        out_sign[it] = current.sign
    elapsed = time.perf_counter() - start
    return Chain(out_theta, out_ll, out_sign, out_acc, list(target.param_names), config.discard, elapsed, proposals)
