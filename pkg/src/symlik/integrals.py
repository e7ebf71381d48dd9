"""Unbiased estimators of box integrals ``C = int_B g(z) dz`` and samplers on a box.

All randomness is read from a :class:`UniformBlockStore`, so that an estimate
is a deterministic function of the stored uniforms.  Each consumer (a
particle, a temperature draw, ...) owns one *unit*: a row of the store.
Rejection samplers first use the candidates packed in their unit and, in the
rare event that all of them are rejected, continue with a generator seeded by
the unit's own bits, which keeps the mapping from ``u`` to draws fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special, stats
from scipy.special import ndtr, ndtri

__all__ = [
    "IntegralError",
    "RejectionBudgetError",
    "UniformBlockStore",
    "block_update",
    "IntegralEstimate",
    "truncnorm_ppf",
    "sov_truncated_normal",
    "sample_truncated_normal",
    "mc_uniform_integral",
    "mvn_box_probability",
    "bvn_box_probabilities",
    "mixture_box_probability",
    "draw_truncated_mixture",
    "conditional_regression_integral",
    "sample_q_t",
    "qt_unit_width",
]

REJECTION_CAP = 1000
DEFAULT_POOL = 4


class IntegralError(ValueError):
    """Invalid integration problem (zero-volume box, bad covariance, ...)."""


class RejectionBudgetError(RuntimeError):
    """A rejection sampler used up its proposal budget for one draw."""


# ---------------------------------------------------------------------------
# random-number store


def _uniforms(rng, shape) -> np.ndarray:
    """Uniforms strictly inside (0, 1)."""
    return (rng.integers(0, 2**53, size=shape) + 0.5) / 2.0**53


@dataclass(frozen=True)
class UniformBlockStore:
    """Uniform random numbers laid out as ``n_units`` rows of fixed width.

    Parameters
    ----------
    values : ndarray, shape (n_units, width)
    blocks : sequence of int arrays
        Partition of the unit indices; :func:`block_update` refreshes one
        block at a time.
    """

    values: np.ndarray
    blocks: tuple = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        blocks = tuple(np.asarray(b, dtype=np.intp).ravel() for b in self.blocks)
        covered = np.concatenate(blocks) if blocks else np.array([], dtype=np.intp)
        if covered.size != values.shape[0] or np.unique(covered).size != covered.size:
            raise ValueError("blocks must partition the unit indices")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def random(cls, n_units: int, width: int, blocks=None, rng=None) -> "UniformBlockStore":
        """Fresh store; ``blocks`` is a count (contiguous split), a list of index arrays, or ``None`` (one block per unit)."""
        rng = np.random.default_rng(rng)
        if blocks is None:
            blocks = n_units
        if isinstance(blocks, (int, np.integer)):
            if not 1 <= blocks <= n_units:
                raise ValueError("number of blocks must lie in [1, n_units]")
            blocks = np.array_split(np.arange(n_units), int(blocks))
        return cls(_uniforms(rng, (n_units, width)), tuple(blocks))

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def overflow_rng(self, unit: int) -> np.random.Generator:
        """Generator seeded by the bits of one unit; used when its packed candidates run out."""
        return np.random.default_rng(np.frombuffer(self.values[unit].tobytes(), dtype=np.uint32))


def block_update(store: UniformBlockStore, block_index: int, rng) -> UniformBlockStore:
    """Copy of ``store`` with the uniforms of one block redrawn."""
    if not 0 <= block_index < store.n_blocks:
        raise IndexError(f"block index {block_index} out of range [0, {store.n_blocks})")
    idx = store.blocks[block_index]
    values = store.values.copy()
    values[idx] = _uniforms(rng, (idx.size, store.width))
    # the partition is unchanged, so skip re-validation
    out = object.__new__(UniformBlockStore)
    object.__setattr__(out, "values", values)
    object.__setattr__(out, "blocks", store.blocks)
    return out


def _unit_values(u, units, width: Optional[int] = None) -> tuple[np.ndarray, UniformBlockStore, np.ndarray]:
    if isinstance(u, UniformBlockStore):
        store = u
    else:
        arr = np.atleast_2d(np.asarray(u, dtype=float))
        store = UniformBlockStore(arr, (np.arange(arr.shape[0]),))
    units = np.arange(store.n_units) if units is None else np.asarray(units, dtype=np.intp).ravel()
    vals = store.values[units]
    if width is not None and vals.shape[1] < width:
        raise IntegralError(f"store width {vals.shape[1]} is below the required {width}")
    return vals, store, units


# ---------------------------------------------------------------------------
# estimates


@dataclass
class IntegralEstimate:
    """Replicate-based estimate of a box integral; ``value`` is the replicate mean."""

    replicates: np.ndarray
    method: str
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.replicates = np.asarray(self.replicates, dtype=float).ravel()

    @property
    def value(self) -> float:
        return float(np.mean(self.replicates))

    @property
    def M(self) -> int:
        return self.replicates.size

    @property
    def standard_error(self) -> float:
        return float(np.std(self.replicates, ddof=1) / np.sqrt(self.M)) if self.M > 1 else np.nan


# ---------------------------------------------------------------------------
# truncated normals and the SOV recursion


def truncnorm_ppf(a, b, u):
    """Inverse CDF of the standard normal truncated to ``(a, b)``.

    Intervals in the upper tail are mirrored into the lower tail where
    ``ndtr`` keeps full relative precision.

    Returns
    -------
    x : ndarray
    prob : ndarray
        ``Phi(b) - Phi(a)``; zero for numerically empty intervals.
    """
    a, b, u = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, u)))
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    plo, phi = ndtr(lo), ndtr(hi)
    prob = np.maximum(phi - plo, 0.0)
    v = np.where(flip, 1.0 - u, u)
    with np.errstate(invalid="ignore"):
        x = ndtri(np.clip(plo + v * prob, 0.0, 1.0))
    bad = ~np.isfinite(x) | (prob <= 0)
    mid = np.clip(np.zeros_like(lo), lo, hi)
    x = np.where(bad, mid, np.clip(x, lo, hi))
    return np.where(flip, -x, x), prob


def _validate_box(lower, upper):
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if lower.size != upper.size:
        raise IntegralError("lower and upper differ in length")
    if not np.all(lower < upper):
        raise IntegralError("box must satisfy lower < upper in every margin")
    return lower, upper


def _chol(sigma):
    try:
        return np.linalg.cholesky(np.asarray(sigma, dtype=float))
    except np.linalg.LinAlgError:
        raise IntegralError("covariance is not positive-definite") from None


def _sov(mu, chol, lower, upper, uni, scale=None):
    """SOV recursion for ``N(mu, chol chol^T / scale^2)`` on the box.

    Returns the proposal draws ``z`` (n, d) and per-coordinate log interval
    probabilities (n, d); their row sums are the log SOV weights.
    """
    n, d = uni.shape[0], mu.size
    s = np.ones(n) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), (n,))
    y = np.empty((n, d))
    logp = np.empty((n, d))
    diag = np.diag(chol)
    for i in range(d):
        shift = y[:, :i] @ chol[i, :i]
        a = (s * (lower[i] - mu[i]) - shift) / diag[i]
        b = (s * (upper[i] - mu[i]) - shift) / diag[i]
        y[:, i], p = truncnorm_ppf(a, b, uni[:, i])
        with np.errstate(divide="ignore"):
            logp[:, i] = np.log(p)
    z = mu + (y @ chol.T) / s[:, None]
    return z, logp


def sov_truncated_normal(
    mu, sigma, lower, upper, u, units=None, return_samples=False, chol=None
) -> IntegralEstimate:
    """SOV (Genz) estimate of ``P(lower < Z < upper)`` for ``Z ~ N(mu, sigma)``.

    Each unit supplies ``d`` uniforms; replicate ``m`` is the product of the
    ``d`` sequential univariate interval probabilities.  With
    ``return_samples`` the SOV proposal points are attached; they are
    weighted by the replicate values, use :func:`sample_truncated_normal`
    for exact draws.  A precomputed Cholesky factor may be passed as
    ``chol`` (``sigma`` is then ignored).
    """
    mu = np.asarray(mu, dtype=float).ravel()
    lower, upper = _validate_box(lower, upper)
    chol = _chol(sigma) if chol is None else np.asarray(chol, dtype=float)
    vals, _, _ = _unit_values(u, units, mu.size)
    z, logp = _sov(mu, chol, lower, upper, vals[:, : mu.size])
    reps = np.exp(logp.sum(axis=1))
    return IntegralEstimate(reps, "sov", z if return_samples else None)


def _rejection_draws(
    store: UniformBlockStore,
    units: np.ndarray,
    offset: int,
    cand_width: int,
    pool: int,
    propose: Callable,
    cap: int = REJECTION_CAP,
) -> np.ndarray:
    """First accepted candidate per unit.

    ``propose(c, rows)`` maps candidate uniforms ``c`` (m, cand_width) for
    output rows ``rows`` to ``(points, log_accept)``; the last column of
    ``c`` is the acceptance uniform.
    """
    n = units.size
    if n == 0:
        return np.empty((0, 0))
    cand = store.values[units, offset : offset + pool * cand_width]
    if cand.shape[1] < pool * cand_width:
        raise IntegralError("store rows are too narrow for the candidate pool")
    cand = cand.reshape(n, pool, cand_width)
    out = None
    done = np.zeros(n, dtype=bool)
    for k in range(pool):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        c = cand[act, k]
        pts, log_acc = propose(c, act)
        if out is None:
            out = np.full((n, pts.shape[1]), np.nan)
        ok = np.log(c[:, -1]) < log_acc
        out[act[ok]] = pts[ok]
        done[act[ok]] = True
    for i in np.flatnonzero(~done):
        rng = store.overflow_rng(units[i])
        used = pool
        while not done[i]:
            if used >= cap:
                raise RejectionBudgetError(f"no draw accepted within {cap} proposals")
            c = _uniforms(rng, (pool, cand_width))
            pts, log_acc = propose(c, np.full(pool, i))
            hit = np.flatnonzero(np.log(c[:, -1]) < log_acc)
            if hit.size:
                out[i] = pts[hit[0]]
                done[i] = True
            used += pool
    return out


def _sov_accept_logprob(logp, mu, chol, lower, upper, scale):
    """Log acceptance turning SOV proposals into exact truncated-normal draws.

    The target/proposal ratio is the product of the interval probabilities
    after the first; each is bounded by the probability of a centred interval
    of the same standardized width.
    """
    d = mu.size
    if d == 1:
        return np.zeros(logp.shape[0])
    s = np.broadcast_to(np.asarray(scale, dtype=float), (logp.shape[0],))
    w = s[:, None] * (upper[1:] - lower[1:]) / np.diag(chol)[1:]
    bound = np.log(special.erf(w / (2.0 * np.sqrt(2.0))))
    return np.sum(logp[:, 1:] - bound, axis=1)


def _gaussian_proposer(mu, chol, lower, upper, scale_rows):
    d = mu.size

    def propose(c, rows):
        s = scale_rows[rows]
        z, logp = _sov(mu, chol, lower, upper, c[:, :d], s)
        return z, _sov_accept_logprob(logp, mu, chol, lower, upper, s)

    return propose


def sample_truncated_normal(
    mu, sigma, lower, upper, u, units=None, t=1.0, pool: int = DEFAULT_POOL, offset: int = 0
) -> np.ndarray:
    """Exact draws from ``N(mu, sigma / t)`` truncated to the box, one per unit.

    SOV proposals are accepted with probability proportional to their SOV
    weight.  Each unit holds ``pool`` candidates of ``d + 1`` uniforms.
    ``t`` may be a scalar or one value per unit.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    lower, upper = _validate_box(lower, upper)
    chol = _chol(sigma)
    _, store, units = _unit_values(u, units)
    scale = np.sqrt(np.broadcast_to(np.asarray(t, dtype=float), (units.size,)))
    if np.any(scale <= 0):
        raise IntegralError("temperatures must be positive")
    propose = _gaussian_proposer(mu, chol, lower, upper, scale)
    return _rejection_draws(store, units, offset, mu.size + 1, pool, propose)


# ---------------------------------------------------------------------------
# generic estimators


def _box_bounds(box):
    if hasattr(box, "lower"):
        return _validate_box(box.lower, box.upper)
    lower, upper = box
    return _validate_box(lower, upper)


def mc_uniform_integral(model, params, box, u, units=None, group=None) -> IntegralEstimate:
    """Plain Monte Carlo: ``vol(B) g(z_m)`` with ``z_m`` uniform on the box.

    Each unit supplies the ``d`` uniforms of one point.
    """
    lower, upper = _box_bounds(box)
    width = upper - lower
    if not np.all(np.isfinite(width)):
        raise IntegralError("plain Monte Carlo needs a bounded box")
    vals, _, _ = _unit_values(u, units, lower.size)
    z = lower + vals[:, : lower.size] * width
    log_vol = float(np.sum(np.log(width)))
    reps = np.exp(log_vol + model.joint_log_density(params, z, group))
    return IntegralEstimate(reps, "mc", z)


def mvn_box_probability(mu, sigma, lower, upper, nodes: int = 200) -> float:
    """Deterministic ``P(lower < Z < upper)`` for ``Z ~ N(mu, sigma)``.

    Closed form for ``d = 1``, Gauss-Legendre over the first margin for
    ``d = 2`` and scipy's Genz integration beyond that.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    lower, upper = _validate_box(lower, upper)
    d = mu.size
    sd = np.sqrt(np.diag(sigma))
    if d == 1:
        a, b = (lower[0] - mu[0]) / sd[0], (upper[0] - mu[0]) / sd[0]
        return float(_interval_prob(np.array([a]), np.array([b]))[0])
    if d == 2:
        rho = sigma[0, 1] / (sd[0] * sd[1])
        return float(bvn_box_probabilities(mu, sd, rho, lower[None], upper[None], nodes)[0])
    return float(
        stats.multivariate_normal.cdf(
            upper, mu, sigma, lower_limit=lower, abseps=1e-7, releps=1e-7, maxpts=2_000_000 * d
        )
    )


def bvn_box_probabilities(mu, sd, rho, lower, upper, nodes: int = 96) -> np.ndarray:
    """Bivariate normal probabilities of many boxes at once (Gauss-Legendre in the first margin).

    ``lower`` and ``upper`` have shape (m, 2); returns an m-vector.
    """
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    a = np.maximum(lower[:, 0], mu[0] - 12 * sd[0])
    b = np.minimum(upper[:, 0], mu[0] + 12 * sd[0])
    b = np.maximum(a, b)
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    x1 = half[:, None] * x + (0.5 * (b + a))[:, None]
    cm = mu[1] + rho * sd[1] * (x1 - mu[0]) / sd[0]
    cs = sd[1] * np.sqrt(1.0 - rho * rho)
    inner = _interval_prob((lower[:, 1:2] - cm) / cs, (upper[:, 1:2] - cm) / cs)
    dens = np.exp(-0.5 * ((x1 - mu[0]) / sd[0]) ** 2) / (sd[0] * np.sqrt(2 * np.pi))
    return half * np.sum(w * dens * inner, axis=1)


def _interval_prob(a, b):
    flip = a > 0
    lo, hi = np.where(flip, -b, a), np.where(flip, -a, b)
    return np.maximum(ndtr(hi) - ndtr(lo), 0.0)


def mixture_box_probability(mixture, lower, upper) -> tuple[float, np.ndarray]:
    """Total and per-component-weighted box probabilities of a normal mixture."""
    probs = np.array(
        [mvn_box_probability(m, c, lower, upper) for m, c in zip(mixture.means, mixture.covs)]
    )
    weighted = mixture.weights * probs
    return float(weighted.sum()), weighted


def draw_truncated_mixture(
    mixture, lower, upper, u, units=None, pool: int = DEFAULT_POOL, offset: int = 0, box_probs=None
):
    """Exact draws from a normal mixture truncated to a box, one per unit.

    The first uniform of a unit picks the component with probability
    proportional to ``w_k P_k(box)``; the remaining ``pool * (p + 1)``
    uniforms feed the SOV accept/reject sampler of that component.

    Returns
    -------
    draws : ndarray, shape (n_units, p)
    total_prob : float
        Mixture probability of the box.

    ``box_probs`` may carry a precomputed :func:`mixture_box_probability`.
    """
    lower, upper = _validate_box(lower, upper)
    _, store, units = _unit_values(u, units)
    total, weighted = box_probs or mixture_box_probability(mixture, lower, upper)
    if total <= 0:
        raise RejectionBudgetError("the mixture puts no mass on the predictor box")
    cum = np.cumsum(weighted / total)
    comp = np.minimum(np.searchsorted(cum, store.values[units, offset], side="right"), cum.size - 1)
    p = lower.size
    out = np.empty((units.size, p))
    for k in np.unique(comp):
        rows = np.flatnonzero(comp == k)
        mu, chol = mixture.means[k], mixture.chols[k]
        propose = _gaussian_proposer(mu, chol, lower, upper, np.ones(rows.size))
        out[rows] = _rejection_draws(store, units[rows], offset + 1, p + 1, pool, propose)
    return out, total


def conditional_regression_integral(
    model, params, mixture, box, u, units=None, group=None, pool: int = DEFAULT_POOL, draws=None
) -> IntegralEstimate:
    """Estimate ``int_B g(y | x, theta) g(x) dy dx`` for a rectangle over ``(y, x)``.

    Predictor draws come from the mixture truncated to the predictor box;
    each replicate is ``P_mix(box_x) * (Phi(y_u | x) - Phi(y_l | x))``.
    The draws depend on ``u`` only, so a caller may pass them in as
    ``draws = (x, P_mix(box_x))``.
    """
    lower, upper = _box_bounds(box)
    if draws is None:
        draws = draw_truncated_mixture(mixture, lower[1:], upper[1:], u, units, pool)
    x, total = draws
    mean, logvar = model.conditional_moments(params, x[:, 0], x[:, 1], group)
    sd = np.exp(0.5 * logvar)
    phi = _interval_prob((lower[0] - mean) / sd, (upper[0] - mean) / sd)
    return IntegralEstimate(total * phi, "regression", x)


# ---------------------------------------------------------------------------
# q_t sampling for the path sampler


def qt_unit_width(model, params, d: int, pool: int = DEFAULT_POOL) -> int:
    """Uniforms per unit needed by :func:`sample_q_t`."""
    return pool * (d + 1)


def sample_q_t(model, params, box, t, u, units=None, group=None, pool: int = DEFAULT_POOL) -> np.ndarray:
    """Draws from ``q_t(z) ∝ g(z)^t`` restricted to the box, one per unit.

    Gaussian models use the truncated normal with covariance ``Sigma / t``.
    Other models use rejection from the uniform law on the box with
    acceptance ``exp(t (log g(z) - log g_max))``, which needs the model's
    density bound on the box.
    """
    lower, upper = _box_bounds(box)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0) or np.any(t_arr > 1):
        raise IntegralError("temperatures must lie in (0, 1]")
    _, store, units = _unit_values(u, units)
    t_rows = np.broadcast_to(t_arr, (units.size,))
    g = model.gaussian(params)
    d = lower.size
    if g is not None:
        mu, chol = g
        propose = _gaussian_proposer(mu, chol, lower, upper, np.sqrt(t_rows))
        return _rejection_draws(store, units, 0, d + 1, pool, propose)
    width = upper - lower
    if not np.all(np.isfinite(width)):
        raise IntegralError("uniform rejection needs a bounded box")
    log_max = model.log_density_bound(params, lower, upper, group)

    def propose(c, rows):
        z = lower + c[:, :d] * width
        return z, t_rows[rows] * (model.joint_log_density(params, z, group) - log_max)

    return _rejection_draws(store, units, 0, d + 1, pool, propose)
