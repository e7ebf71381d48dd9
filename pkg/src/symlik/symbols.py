"""Random hyper-rectangle summaries of micro-data.

A rectangle symbol keeps the box bounds, the total count and, at full
resolution, the rows that sit on a face of the box (boundary rows) and the
rows outside it (external rows).  Everything else is represented only by the
interior count ``n_total - n_b - n_e``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SymbolError",
    "MicroData",
    "RectangleSymbol",
    "ComponentRectangle",
    "MixtureRectangleSet",
    "build_minmax_rectangle",
    "build_quantile_rectangle",
    "build_component_rectangles",
    "classify_rows",
    "read_csv",
    "save_symbols",
    "load_symbols",
]

# relative tolerance for "on a face" comparisons, scaled by the box width
FACE_RTOL = 1e-12


class SymbolError(ValueError):
    """Raised when a summary cannot be built from the supplied data."""


@dataclass(frozen=True)
class MicroData:
    """An ``n x d`` matrix of finite observations."""

    rows: np.ndarray
    column_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise SymbolError("micro-data must be a non-empty n x d matrix")
        if not np.all(np.isfinite(rows)):
            raise SymbolError("micro-data contains non-finite entries")
        if self.column_names is not None and len(self.column_names) != rows.shape[1]:
            raise SymbolError("column_names length does not match the data width")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class RectangleSymbol:
    """A single random rectangle ``B_1`` with its boundary and external rows.

    ``group`` optionally tags the symbol with a model group (the airline index
    in the regression model); it is ignored by models without groups.
    """

    lower: np.ndarray
    upper: np.ndarray
    n_total: int
    boundary_points: np.ndarray
    external_points: np.ndarray
    q: float = 0.0
    group: Optional[int] = None

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        d = lower.size
        if upper.size != d:
            raise SymbolError("lower and upper bounds differ in length")
        if not np.all(lower < upper):
            raise SymbolError("box must have lower < upper in every margin")
        xb = np.asarray(self.boundary_points, dtype=float).reshape(-1, d)
        xe = np.asarray(self.external_points, dtype=float).reshape(-1, d)
        if self.n_total < xb.shape[0] + xe.shape[0]:
            raise SymbolError("n_total is smaller than n_b + n_e")
        if not 0.0 <= self.q <= 0.5:
            raise SymbolError("q must lie in [0, 0.5]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "boundary_points", xb)
        object.__setattr__(self, "external_points", xe)
        object.__setattr__(self, "n_total", int(self.n_total))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def n_b(self) -> int:
        return self.boundary_points.shape[0]

    @property
    def n_e(self) -> int:
        return self.external_points.shape[0]

    @property
    def n_r(self) -> int:
        """Interior count; the exponent of the box-probability term."""
        return self.n_total - self.n_b - self.n_e

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.upper - self.lower)))

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "n_total": self.n_total,
            "n_b": self.n_b,
            "n_e": self.n_e,
            "q": self.q,
            "group": self.group,
            "boundary_points": self.boundary_points.tolist(),
            "external_points": self.external_points.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RectangleSymbol":
        d = len(payload["lower"])
        return cls(
            lower=np.asarray(payload["lower"]),
            upper=np.asarray(payload["upper"]),
            n_total=payload["n_total"],
            boundary_points=np.asarray(payload["boundary_points"], dtype=float).reshape(-1, d),
            external_points=np.asarray(payload["external_points"], dtype=float).reshape(-1, d),
            q=payload.get("q", 0.0),
            group=payload.get("group"),
        )


@dataclass(frozen=True)
class ComponentRectangle:
    symbol: RectangleSymbol
    weight: float
    index: int


@dataclass
class MixtureRectangleSet:
    """Per-component rectangles over ``(y, x_1, ..., x_p)``."""

    components: list[ComponentRectangle]
    predictor_mixture: object = None
    assignments: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def symbols(self) -> list[RectangleSymbol]:
        return [c.symbol for c in self.components]

    @property
    def n_total(self) -> int:
        return sum(c.symbol.n_total for c in self.components)

    @property
    def n_external(self) -> int:
        return sum(c.symbol.n_e for c in self.components)

    def to_dict(self) -> dict:
        out = {
            "components": [
                {"weight": c.weight, "index": c.index, "symbol": c.symbol.to_dict()}
                for c in self.components
            ]
        }
        if self.predictor_mixture is not None and hasattr(self.predictor_mixture, "to_dict"):
            out["predictor_mixture"] = self.predictor_mixture.to_dict()
        return out


def _face_tolerance(lower, upper):
    return FACE_RTOL * np.maximum(upper - lower, 1.0)


def classify_rows(rows: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Return boolean masks ``(interior, boundary, external)`` for each row.

    A row attaining a face value in any margin is boundary, even when it lies
    outside the box in another margin; the remaining rows outside the closed
    box are external.
    """
    rows = np.atleast_2d(rows)
    tol = _face_tolerance(lower, upper)
    on_face = (np.abs(rows - lower) <= tol) | (np.abs(rows - upper) <= tol)
    boundary = on_face.any(axis=1)
    outside = (rows < lower - tol) | (rows > upper + tol)
    external = ~boundary & outside.any(axis=1)
    interior = ~boundary & ~external
    return interior, boundary, external


def _as_rows(data) -> np.ndarray:
    if isinstance(data, MicroData):
        return data.rows
    return MicroData(np.asarray(data, dtype=float)).rows


def _order_stat_indices(n: int, q: float) -> tuple[int, int]:
    """0-based positions of the ceil(nq)-th and floor(n(1-q))-th order statistics."""
    lo = max(1, math.ceil(n * q - 1e-9))
    hi = min(n, math.floor(n * (1.0 - q) + 1e-9))
    return lo - 1, hi - 1


def _rectangle_from_bounds(rows, lower, upper, q, group=None) -> RectangleSymbol:
    interior, boundary, external = classify_rows(rows, lower, upper)
    return RectangleSymbol(
        lower=lower,
        upper=upper,
        n_total=rows.shape[0],
        boundary_points=rows[boundary],
        external_points=rows[external],
        q=q,
        group=group,
    )


def build_quantile_rectangle(data, q: float, group: Optional[int] = None) -> RectangleSymbol:
    """Box spanned by the marginal ``ceil(nq)``-th and ``floor(n(1-q))``-th order statistics.

    Parameters
    ----------
    data : MicroData or array_like, shape (n, d)
    q : float
        Tail fraction trimmed from each side of every margin, ``0 <= q < 0.5``.

    Raises
    ------
    SymbolError
        If ``q`` is out of range, ``n < 2``, or the trimmed box is degenerate.
    """
    if not 0.0 <= q < 0.5:
        raise SymbolError(f"q must lie in [0, 0.5), got {q}")
    rows = _as_rows(data)
    n = rows.shape[0]
    if n < 2:
        raise SymbolError("need at least two rows to build a rectangle")
    i_lo, i_hi = _order_stat_indices(n, q)
    if i_lo >= i_hi:
        raise SymbolError(f"n = {n} is too small for q = {q}")
    ordered = np.sort(rows, axis=0)
    lower, upper = ordered[i_lo].copy(), ordered[i_hi].copy()
    if not np.all(lower < upper):
        raise SymbolError("a margin has zero width after trimming")
    return _rectangle_from_bounds(rows, lower, upper, q, group)


def build_minmax_rectangle(data, group: Optional[int] = None) -> RectangleSymbol:
    """Minimal bounding box of the data (``q = 0``, no external rows)."""
    return build_quantile_rectangle(data, 0.0, group=group)


def build_component_rectangles(
    responses,
    predictors,
    K: Optional[int] = None,
    q: float = 0.0,
    mixture=None,
    min_count: int = 10_000,
    group: Optional[int] = None,
    seed=None,
) -> MixtureRectangleSet:
    """One rectangle over ``(y, x)`` per mixture component of the predictors.

    Rows are allocated to their most likely component of a normal mixture
    fitted to the predictors.  Within a component, a quantile rectangle is
    built over the predictors only; the response interval is the min-max of
    the responses whose predictors fall inside that predictor box.  Rows of
    the component outside the predictor box are kept as external rows.

    Parameters
    ----------
    responses : array_like, shape (n,)
    predictors : MicroData or array_like, shape (n, p)
    K : int, optional
        Number of mixture components; ignored when ``mixture`` is supplied.
    q : float
        Quantile trimming of each predictor margin.
    mixture : NormalMixture, optional
        Pre-fitted predictor mixture.
    min_count : int
        Smallest admissible component size.
    """
    from .models import fit_mixture_em

    y = np.asarray(responses, dtype=float).ravel()
    x = _as_rows(predictors)
    if y.size != x.shape[0]:
        raise SymbolError("responses and predictors have different lengths")
    if not np.all(np.isfinite(y)):
        raise SymbolError("responses contain non-finite entries")
    if mixture is None:
        if K is None or K < 1:
            raise SymbolError("K must be a positive integer")
        mixture = fit_mixture_em(x, K, seed=seed).mixture
    labels = mixture.assign(x)
    counts = np.bincount(labels, minlength=mixture.n_components)
    if counts.min() < min_count:
        raise SymbolError(
            f"component sizes {counts.tolist()} fall below the minimum {min_count}"
        )
    components = []
    for k in range(mixture.n_components):
        idx = np.flatnonzero(labels == k)
        xk, yk = x[idx], y[idx]
        pbox = build_quantile_rectangle(xk, q)
        _, _, outside = classify_rows(xk, pbox.lower, pbox.upper)
        inside_y = yk[~outside]
        y_lo, y_hi = inside_y.min(), inside_y.max()
        if not y_lo < y_hi:
            raise SymbolError(f"component {k} has a degenerate response range")
        joint = np.column_stack([yk, xk])
        lower = np.r_[y_lo, pbox.lower]
        upper = np.r_[y_hi, pbox.upper]
        symbol = _rectangle_from_bounds(joint, lower, upper, q, group)
        components.append(ComponentRectangle(symbol, float(mixture.weights[k]), k))
    return MixtureRectangleSet(components, mixture, labels)


def read_csv(path, header: Optional[bool] = None) -> MicroData:
    """Read a numeric CSV file, one observation per line.

    The header row is detected automatically unless ``header`` is given.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SymbolError(f"{path} is empty")
    if header is None:
        try:
            [float(v) for v in rows[0]]
            header = False
        except ValueError:
            header = True
    names = tuple(v.strip() for v in rows[0]) if header else None
    body = rows[1:] if header else rows
    try:
        values = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise SymbolError(f"non-numeric entry in {path}: {exc}") from None
    return MicroData(values, names)


def save_symbols(symbols: Sequence[RectangleSymbol] | MixtureRectangleSet, path) -> None:
    if isinstance(symbols, MixtureRectangleSet):
        payload = symbols.to_dict()
    else:
        payload = {"symbols": [s.to_dict() for s in symbols]}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_symbols(path) -> list[RectangleSymbol]:
    """Load symbols written by :func:`save_symbols` (either layout)."""
    payload = json.loads(Path(path).read_text())
    if "components" in payload:
        return [RectangleSymbol.from_dict(c["symbol"]) for c in payload["components"]]
    return [RectangleSymbol.from_dict(s) for s in payload["symbols"]]
