"""Estimators of ``A = n_r log C``: the path sampler and the Taylor estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .integrals import IntegralEstimate, _box_bounds, _unit_values, sample_q_t

__all__ = [
    "LogLikError",
    "TemperatureLadder",
    "LogLikEstimate",
    "trapezoid_integrate",
    "trapezoid_weights",
    "path_sampler_log_integral",
    "taylor_log_integral",
]


class LogLikError(ValueError):
    pass


@dataclass(frozen=True)
class TemperatureLadder:
    """Temperatures ``t_i = (i / T) ** exponent`` for ``i = 1..T``."""

    T: int = 100
    exponent: float = 5.0

    def __post_init__(self):
        if self.T < 1:
            raise LogLikError("the ladder needs at least one temperature")
        if self.exponent <= 0:
            raise LogLikError("the ladder exponent must be positive")

    @property
    def values(self) -> np.ndarray:
        return (np.arange(1, self.T + 1) / self.T) ** self.exponent


@dataclass(frozen=True)
class LogLikEstimate:
    """Estimate of ``exponent_count * log C`` with its sampling variance."""

    value: float
    variance: float
    method: str
    exponent_count: float

    def __post_init__(self):
        if not self.variance >= 0:
            raise LogLikError("variance must be non-negative")


def trapezoid_weights(t, flat_start: bool = True) -> np.ndarray:
    """Quadrature weights of the trapezoid rule on the abscissae ``t``.

    With ``flat_start`` the first value is extended flat over ``[0, t_1]``.
    """
    t = np.asarray(t, dtype=float).ravel()
    if t.size < 1 or (t.size < 2 and not flat_start):
        raise LogLikError("need at least two abscissae")
    if np.any(np.diff(t) <= 0):
        raise LogLikError("abscissae must be strictly increasing")
    w = np.zeros(t.size)
    h = np.diff(t)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    if flat_start:
        w[0] += t[0]
    return w


def trapezoid_integrate(t, values, flat_start: bool = True) -> float:
    """Trapezoid rule over ``(t_i, v_i)``; see :func:`trapezoid_weights`."""
    values = np.asarray(values, dtype=float).ravel()
    w = trapezoid_weights(t, flat_start)
    if values.size != w.size:
        raise LogLikError("t and values differ in length")
    return float(w @ values)


def _exponent(box, exponent_count):
    if exponent_count is not None:
        return float(exponent_count)
    return float(getattr(box, "n_r", 1))


def path_sampler_log_integral(
    model,
    params,
    box,
    ladder: TemperatureLadder,
    M: int,
    u,
    units=None,
    exponent_count: Optional[float] = None,
    group=None,
    pool: int = 4,
) -> LogLikEstimate:
    """Path-sampling estimate of ``n_r log int_B g(z) dz``.

    Writes ``log C = log vol(B) + int_0^1 E_{q_t}[log g(z)] dt`` where
    ``q_t ∝ g^t`` on the box, estimates each expectation from ``M`` draws
    and integrates over the ladder with the trapezoid rule.

    Parameters
    ----------
    box : RectangleSymbol or (lower, upper)
        ``n_r`` of a symbol is the default exponent.
    u : UniformBlockStore
        ``units`` (default: all) must hold ``T * M`` units laid out
        temperature-major.
    """
    lower, upper = _box_bounds(box)
    n = _exponent(box, exponent_count)
    t = ladder.values
    _, store, units = _unit_values(u, units)
    if units.size != t.size * M:
        raise LogLikError(f"expected {t.size * M} units, got {units.size}")
    t_rows = np.repeat(t, M)
    z = sample_q_t(model, params, (lower, upper), t_rows, store, units, group, pool)
    logg = model.joint_log_density(params, z, group).reshape(t.size, M)
    if not np.all(np.isfinite(logg)):
        raise LogLikError("non-finite log density at a q_t draw")
    means = logg.mean(axis=1)
    w = trapezoid_weights(t)
    log_vol = float(np.sum(np.log(upper - lower)))
    value = n * (log_vol + w @ means)
    # centring on the first draw keeps constant rows at exactly zero variance
    spread = (logg - logg[:, :1]).var(axis=1, ddof=1) if M > 1 else np.zeros(t.size)
    var = n**2 * float(np.sum(w**2 * spread / M))
    return LogLikEstimate(float(value), var, "path", n)


def taylor_log_integral(estimate, exponent_count: float) -> LogLikEstimate:
    """Second-order Taylor estimate of ``exponent_count * log C``.

    ``value = n [mean(log C_m) + var(C_m) / (2 mean(C_m)^2)]`` with the
    unbiased sample variance; ``variance = n^2 var(log C_m) / M``.
    """
    reps = estimate.replicates if isinstance(estimate, IntegralEstimate) else np.asarray(estimate, float)
    reps = np.asarray(reps, dtype=float).ravel()
    if reps.size < 2:
        raise LogLikError("the Taylor estimator needs at least two replicates")
    if np.any(~(reps > 0)):
        raise LogLikError("replicates must be positive to take logs")
    n = float(exponent_count)
    logs = np.log(reps)
    mean = reps.mean()
    value = n * (logs.mean() + reps.var(ddof=1) / (2.0 * mean * mean))
    variance = n * n * logs.var(ddof=1) / reps.size
    return LogLikEstimate(float(value), float(variance), "taylor", n)
