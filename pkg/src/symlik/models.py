"""Micro-data model families and the predictor mixture.

Every model works on an unconstrained parameter vector ``theta`` (positive
quantities on the log scale) so that random-walk samplers can move freely;
``unpack`` turns ``theta`` into a typed parameter object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import ndtr

__all__ = [
    "ModelError",
    "DegenerateMixtureError",
    "MvnParams",
    "FactorParams",
    "HeteroRegParams",
    "NormalMixture",
    "MixtureFit",
    "GaussianModel",
    "FactorModel",
    "HeteroRegressionModel",
    "mvn_logpdf",
    "fit_mixture_em",
    "select_K",
    "full_data_mwg",
]

LOG_2PI = math.log(2.0 * math.pi)


def logsumexp(a, axis=None, keepdims=False):
    """Lean log-sum-exp for finite inputs (the EM inner loop calls it often)."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


class ModelError(ValueError):
    """Invalid model parameters (e.g. a covariance that is not positive-definite)."""


class DegenerateMixtureError(ModelError):
    """EM produced (or started from) a singular mixture component."""


def _cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise ModelError("covariance matrix is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ModelError("covariance matrix is not positive-definite") from None


def mvn_logpdf(rows: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Multivariate normal log density evaluated row-wise via a Cholesky factor."""
    rows = np.atleast_2d(rows)
    d = mu.size
    white = linalg.solve_triangular(chol, (rows - mu).T, lower=True, check_finite=False)
    return (
        -0.5 * d * LOG_2PI
        - np.log(np.diag(chol)).sum()
        - 0.5 * np.einsum("ij,ij->j", white, white)
    )


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class MvnParams:
    mu: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        chol = np.asarray(self.chol, dtype=float)
        if np.any(np.diag(chol) <= 0) or not np.allclose(chol, np.tril(chol)):
            raise ModelError("chol must be lower-triangular with a positive diagonal")
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).ravel())
        object.__setattr__(self, "chol", chol)

    @classmethod
    def from_cov(cls, mu, sigma) -> "MvnParams":
        return cls(np.asarray(mu, dtype=float), _cholesky(sigma))

    @property
    def sigma(self) -> np.ndarray:
        return self.chol @ self.chol.T


@dataclass(frozen=True)
class FactorParams:
    mu: np.ndarray
    loadings: np.ndarray
    diag_noise: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        D = np.asarray(self.diag_noise, dtype=float).ravel()
        if L.shape[1] > L.shape[0]:
            raise ModelError("more factors than dimensions")
        if not np.allclose(L, np.tril(L)):
            raise ModelError("loadings must be lower-triangular")
        if np.any(D <= 0):
            raise ModelError("diag_noise entries must be positive")
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).ravel())
        object.__setattr__(self, "loadings", L)
        object.__setattr__(self, "diag_noise", D)

    @property
    def sigma(self) -> np.ndarray:
        return self.loadings @ self.loadings.T + np.diag(self.diag_noise)


@dataclass(frozen=True)
class HeteroRegParams:
    """``y = b0[g] + beta1 x1 + beta2 x2 + e``, ``log var(e) = alpha0 + alpha1 (x2 - xbar2[g])``."""

    intercepts: np.ndarray
    beta1: float
    beta2: float
    alpha0: float
    alpha1: float

    def __post_init__(self):
        b0 = np.asarray(self.intercepts, dtype=float).ravel()
        vals = np.r_[b0, self.beta1, self.beta2, self.alpha0, self.alpha1]
        if not np.all(np.isfinite(vals)):
            raise ModelError("regression parameters must be finite")
        object.__setattr__(self, "intercepts", b0)


# ---------------------------------------------------------------------------
# models


class _Model:
    """Shared plumbing: parameter names, blocks, (un)packing."""

    name = "model"
    dim: int

    def param_names(self) -> list[str]:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return len(self.param_names())

    def param_blocks(self) -> list[np.ndarray]:
        return [np.arange(self.n_params)]

    def unpack(self, theta):
        raise NotImplementedError

    def pack(self, params) -> np.ndarray:
        raise NotImplementedError

    def gaussian(self, params):
        """``(mu, chol)`` when the micro-data law is multivariate normal, else ``None``."""
        return None

    def log_density(self, params, rows, group=None) -> np.ndarray:
        raise NotImplementedError

    def joint_log_density(self, params, rows, group=None) -> np.ndarray:
        """Log density of the full micro-data vector (the integrand over a box)."""
        return self.log_density(params, rows, group)

    def log_density_bound(self, params, lower, upper, group=None) -> float:
        """Upper bound of ``joint_log_density`` over the box."""
        g = self.gaussian(params)
        if g is None:
            raise NotImplementedError
        return -0.5 * g[0].size * LOG_2PI - np.log(np.diag(g[1])).sum()

    def marginal_log_probs(self, params, lower, upper) -> np.ndarray:
        """Per-margin log probabilities of the box (Gaussian models only)."""
        g = self.gaussian(params)
        if g is None:
            raise NotImplementedError(f"{self.name} has no marginal CDFs")
        mu, chol = g
        sd = np.sqrt(np.sum(chol**2, axis=1))
        return np.log(ndtr((upper - mu) / sd) - ndtr((lower - mu) / sd))

    def loglik(self, theta, rows, group=None) -> float:
        """Full-data log-likelihood at ``theta``."""
        return float(np.sum(self.log_density(self.unpack(theta), rows, group)))


class GaussianModel(_Model):
    """Multivariate normal; ``theta = (mu, log diag(C), strictly-lower(C))`` with ``Sigma = C C^T``."""

    name = "mvn"

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._tril = np.tril_indices(self.dim, -1)

    def param_names(self):
        d = self.dim
        names = [f"mu{i}" for i in range(d)] + [f"logc{i}{i}" for i in range(d)]
        names += [f"c{i}{j}" for i, j in zip(*self._tril)]
        return names

    def param_blocks(self):
        d = self.dim
        return [np.arange(d), np.arange(d, self.n_params)]

    def unpack(self, theta) -> MvnParams:
        theta = np.asarray(theta, dtype=float)
        d = self.dim
        chol = np.diag(np.exp(theta[d : 2 * d]))
        chol[self._tril] = theta[2 * d :]
        return MvnParams(theta[:d], chol)

    def pack(self, params: MvnParams) -> np.ndarray:
        c = params.chol
        return np.r_[params.mu, np.log(np.diag(c)), c[self._tril]]

    def gaussian(self, params: MvnParams):
        return params.mu, params.chol

    def log_density(self, params: MvnParams, rows, group=None):
        return mvn_logpdf(rows, params.mu, params.chol)


class FactorModel(_Model):
    """``y = mu + L f + e`` with lower-triangular ``L`` (d x k) and diagonal noise ``D``.

    ``theta = (mu, lower-triangular entries of L, log diag(D))``.
    """

    name = "factor"

    def __init__(self, dim: int, n_factors: int = 1):
        if n_factors > dim:
            raise ModelError("more factors than dimensions")
        self.dim = int(dim)
        self.n_factors = int(n_factors)
        self._lidx = np.tril_indices(self.dim, 0, self.n_factors)

    def param_names(self):
        names = [f"mu{i}" for i in range(self.dim)]
        names += [f"L{i}{j}" for i, j in zip(*self._lidx)]
        names += [f"logD{i}" for i in range(self.dim)]
        return names

    def param_blocks(self):
        d, nl = self.dim, self._lidx[0].size
        return [np.arange(d), np.arange(d, d + nl), np.arange(d + nl, 2 * d + nl)]

    def unpack(self, theta) -> FactorParams:
        theta = np.asarray(theta, dtype=float)
        d, nl = self.dim, self._lidx[0].size
        L = np.zeros((d, self.n_factors))
        L[self._lidx] = theta[d : d + nl]
        return FactorParams(theta[:d], L, np.exp(theta[d + nl :]))

    def pack(self, params: FactorParams) -> np.ndarray:
        return np.r_[params.mu, params.loadings[self._lidx], np.log(params.diag_noise)]

    def gaussian(self, params: FactorParams):
        return params.mu, _cholesky(params.sigma)

    def log_density(self, params: FactorParams, rows, group=None):
        return mvn_logpdf(rows, params.mu, _cholesky(params.sigma))

    def simulate(self, params: FactorParams, n: int, rng) -> np.ndarray:
        f = rng.standard_normal((n, self.n_factors))
        e = rng.standard_normal((n, self.dim)) * np.sqrt(params.diag_noise)
        return params.mu + f @ params.loadings.T + e


class HeteroRegressionModel(_Model):
    """Grouped heteroscedastic linear regression on rows ``(y, x1, x2)``.

    ``log_density`` is the conditional density of ``y`` given the
    predictors.  ``joint_log_density`` adds the log density of a
    per-group predictor mixture, which must then be supplied.
    """

    name = "regression"
    dim = 3

    def __init__(self, x2_means, mixtures: Optional[dict] = None):
        self.x2_means = np.asarray(x2_means, dtype=float).ravel()
        self.n_groups = self.x2_means.size
        self.mixtures = dict(mixtures or {})

    def param_names(self):
        return [f"b0_{g}" for g in range(self.n_groups)] + ["beta1", "beta2", "alpha0", "alpha1"]

    def param_blocks(self):
        G = self.n_groups
        return [np.arange(G + 2), np.arange(G + 2, G + 4)]

    def unpack(self, theta) -> HeteroRegParams:
        theta = np.asarray(theta, dtype=float)
        G = self.n_groups
        return HeteroRegParams(theta[:G], *theta[G : G + 4])

    def pack(self, params: HeteroRegParams) -> np.ndarray:
        return np.r_[params.intercepts, params.beta1, params.beta2, params.alpha0, params.alpha1]

    def _group(self, group):
        if group is None:
            if self.n_groups != 1:
                raise ModelError("a group index is required for a multi-group regression")
            return 0
        return int(group)

    def conditional_moments(self, params: HeteroRegParams, x1, x2, group=None):
        """Mean and log-variance of ``y`` given the predictors."""
        g = self._group(group)
        mean = params.intercepts[g] + params.beta1 * x1 + params.beta2 * x2
        logvar = params.alpha0 + params.alpha1 * (x2 - self.x2_means[g])
        return mean, logvar

    def log_density(self, params: HeteroRegParams, rows, group=None):
        rows = np.atleast_2d(rows)
        mean, logvar = self.conditional_moments(params, rows[:, 1], rows[:, 2], group)
        r = rows[:, 0] - mean
        return -0.5 * (LOG_2PI + logvar + r * r * np.exp(-logvar))

    def joint_log_density(self, params, rows, group=None):
        rows = np.atleast_2d(rows)
        mix = self.mixtures[self._group(group)]
        return self.log_density(params, rows, group) + mix.log_pdf(rows[:, 1:])

    def log_density_bound(self, params, lower, upper, group=None):
        g = self._group(group)
        ends = params.alpha0 + params.alpha1 * (np.array([lower[2], upper[2]]) - self.x2_means[g])
        return -0.5 * (LOG_2PI + ends.min()) + self.mixtures[g].log_density_bound()

    def simulate(self, params: HeteroRegParams, x: np.ndarray, group, rng) -> np.ndarray:
        mean, logvar = self.conditional_moments(params, x[:, 0], x[:, 1], group)
        return mean + np.exp(0.5 * logvar) * rng.standard_normal(mean.size)


# ---------------------------------------------------------------------------
# normal mixtures


@dataclass(frozen=True)
class NormalMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float).reshape(w.size, means.shape[1], means.shape[1])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ModelError("mixture weights must be nonnegative and sum to 1")
        chols = np.array([_cholesky(c) for c in covs])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "_chols", chols)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def chols(self) -> np.ndarray:
        return self._chols

    def component_log_pdf(self, rows) -> np.ndarray:
        rows = np.atleast_2d(rows)
        return np.column_stack(
            [mvn_logpdf(rows, m, c) for m, c in zip(self.means, self._chols)]
        )

    def log_pdf(self, rows) -> np.ndarray:
        return logsumexp(self.component_log_pdf(rows) + np.log(self.weights), axis=1)

    def responsibilities(self, rows) -> np.ndarray:
        lp = self.component_log_pdf(rows) + np.log(self.weights)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def assign(self, rows) -> np.ndarray:
        return np.argmax(self.component_log_pdf(rows) + np.log(self.weights), axis=1)

    def log_density_bound(self) -> float:
        peaks = -0.5 * self.dim * LOG_2PI - np.log(np.diagonal(self._chols, axis1=1, axis2=2)).sum(1)
        return float(logsumexp(peaks + np.log(self.weights)))

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        x = self.means[comp] + np.einsum("nij,nj->ni", self._chols[comp], z)
        return x, comp

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, payload) -> "NormalMixture":
        return cls(np.array(payload["weights"]), np.array(payload["means"]), np.array(payload["covs"]))


@dataclass
class MixtureFit:
    mixture: NormalMixture
    loglik: float
    bic: float
    n_iter: int
    trace: list[float] = field(default_factory=list)


def _kmeans_pp(x, K, rng):
    centers = [x[rng.integers(x.shape[0])]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            raise DegenerateMixtureError("data have fewer distinct points than components")
        centers.append(x[rng.choice(x.shape[0], p=d2 / total)])
        d2 = np.minimum(d2, np.sum((x - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, floor):
    n, d = x.shape
    nk = resp.sum(axis=0)
    if np.any(nk < d + 1):
        raise DegenerateMixtureError("a mixture component collapsed to too few rows")
    means = (resp.T @ x) / nk[:, None]
    second = np.einsum("nk,ni,nj->kij", resp, x, x, optimize=True) / nk[:, None, None]
    covs = second - np.einsum("ki,kj->kij", means, means)
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    low = np.linalg.eigvalsh(covs)[:, 0]
    if np.any(low <= floor):
        raise DegenerateMixtureError(f"component {int(np.argmin(low))} has a singular covariance")
    return NormalMixture(nk / n, means, covs)


def _em_once(x, K, rng, tol, max_iter):
    floor = 1e-10 * max(float(np.var(x, axis=0).max()), 1e-300)
    if np.var(x, axis=0).min() <= floor:
        raise DegenerateMixtureError("a predictor margin has zero variance")
    centers = _kmeans_pp(x, K, rng)
    labels = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    resp = np.eye(K)[labels]
    mix = _m_step(x, resp, floor)
    trace = []
    for it in range(1, max_iter + 1):
        lp = mix.component_log_pdf(x) + np.log(mix.weights)
        norm = logsumexp(lp, axis=1, keepdims=True)
        ll = float(norm.sum())
        trace.append(ll)
        if it > 1 and abs(ll - trace[-2]) <= tol * abs(trace[-2]):
            break
        mix = _m_step(x, np.exp(lp - norm), floor)
    return mix, trace


def fit_mixture_em(
    predictors,
    K: int,
    restarts: int = 5,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed=None,
    max_rows: Optional[int] = None,
) -> MixtureFit:
    """Fit a ``K``-component normal mixture by EM; keep the restart with the best BIC.

    Each restart is seeded by k-means++ on the rows.  Convergence is declared
    when the relative change in log-likelihood drops below ``tol``.  With
    ``max_rows`` the fit uses a random subsample of that many rows.

    Raises
    ------
    DegenerateMixtureError
        When every restart hits a singular component.
    """
    x = np.atleast_2d(np.asarray(getattr(predictors, "rows", predictors), dtype=float))
    if K < 1:
        raise ModelError("K must be at least 1")
    rng = np.random.default_rng(seed)
    if max_rows is not None and x.shape[0] > max_rows:
        x = x[rng.choice(x.shape[0], max_rows, replace=False)]
    n, d = x.shape
    n_free = (K - 1) + K * d + K * d * (d + 1) // 2
    best, last_err = None, None
    for _ in range(restarts):
        try:
            mix, trace = _em_once(x, K, rng, tol, max_iter)
        except DegenerateMixtureError as err:
            last_err = err
            continue
        ll = float(np.sum(mix.log_pdf(x)))
        bic = -2.0 * ll + n_free * math.log(n)
        if best is None or bic < best.bic:
            best = MixtureFit(mix, ll, bic, len(trace), trace)
    if best is None:
        raise last_err
    return best


def select_K(
    predictors,
    K_max: int,
    min_count: int = 1,
    rel_improvement: float = 0.01,
    seed=None,
    return_fit: bool = False,
    **em,
):
    """Smallest ``K`` whose BIC is not improved by more than ``rel_improvement`` at ``K + 1``.

    ``K + 1`` is also rejected when any of its components (by hard assignment)
    holds fewer than ``min_count`` rows.  With ``return_fit`` the pair
    ``(K, MixtureFit)`` is returned instead of ``K``.
    """
    x = np.atleast_2d(np.asarray(getattr(predictors, "rows", predictors), dtype=float))
    if x.shape[0] < min_count:
        raise ModelError("not enough rows for a single component of the minimum size")
    current = fit_mixture_em(x, 1, seed=seed, **em)
    K = 1
    while K < K_max:
        try:
            nxt = fit_mixture_em(x, K + 1, seed=seed, **em)
        except DegenerateMixtureError:
            break
        counts = np.bincount(nxt.mixture.assign(x), minlength=K + 1)
        if counts.min() < min_count or (current.bic - nxt.bic) < rel_improvement * abs(current.bic):
            break
        current, K = nxt, K + 1
    return (K, current) if return_fit else K


def full_data_mwg(model, data, theta0, config=None, prior=None, group=None, rng=None):
    """Metropolis-within-Gibbs on the exact full-data likelihood.

    Uses the same adaptive random-walk blocks as the pseudo-marginal sampler
    (``model.param_blocks()`` unless ``config.blocks`` is set).
    """
    from .pmmh import FullDataTarget, MCMCConfig, signed_block_pmmh

    rows = np.atleast_2d(np.asarray(getattr(data, "rows", data), dtype=float))
    target = FullDataTarget(model, rows, group=group)
    return signed_block_pmmh(target, theta0, config or MCMCConfig(), prior=prior, rng=rng)
