"""Grid functions, Gauss-Hermite rules and the tilted Gaussian smoothing step.

A :class:`GridFunction` samples a function on a uniform symmetric grid and
continues it linearly beyond the ends. :func:`smooth_tilt` advances the
recursion by one level,

    x -> (1/m) log E exp(m f(x + z)),   z ~ N(0, sigma2),

and :func:`tilt_weight_expectation` computes the matching reweighted average
E[V(x, z) g(x + z)] with V = exp(m (f(x + z) - f_cur(x))).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.special import roots_hermitenorm

DEFAULT_POINTS = 2049
DEFAULT_QUAD_ORDER = 41
DEFAULT_SAFETY_SIGMAS = 8.0
# level variance up to which the configured order is used unchanged
RULE_REFERENCE_VARIANCE = 1.0
MAX_QUAD_ORDER = 401


class NumericsError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Grid:
    half_width: float
    n_points: int = DEFAULT_POINTS

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.n_points < 5 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 5 so that 0 is a node")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(-self.half_width, self.half_width, self.n_points)
        x = 0.5 * (x - x[::-1])
        x.setflags(write=False)
        return x

    def refined(self) -> "Grid":
        """Same interval, spacing halved."""
        return Grid(self.half_width, 2 * self.n_points - 1)

    def summary(self) -> dict:
        return {"half_width": self.half_width, "n_points": self.n_points, "spacing": self.spacing}


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray
    left_slope: float = 0.0
    right_slope: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} values, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, grid: Grid, fn: Callable, left_slope: float | None = None, right_slope: float | None = None):
        """Sample ``fn`` on the grid; slopes default to ``fn``'s own if it has them."""
        ls = getattr(fn, "left_slope", 0.0) if left_slope is None else left_slope
        rs = getattr(fn, "right_slope", 0.0) if right_slope is None else right_slope
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float), ls, rs)

    def __call__(self, x):
        return eval_at(self, x)

    def slope_mismatch(self) -> float:
        """Largest gap between stored tail slopes and one-sided differences."""
        v, dx = self.values, self.grid.spacing
        return max(abs((v[1] - v[0]) / dx - self.left_slope), abs((v[-1] - v[-2]) / dx - self.right_slope))

    def check_slopes(self) -> None:
        if self.slope_mismatch() > 10 * self.grid.spacing:
            raise ValueError("tail slopes inconsistent with boundary differences")

    def map(self, fn: Callable[[np.ndarray], np.ndarray], left_slope: float = 0.0, right_slope: float = 0.0):
        return GridFunction(self.grid, fn(self.values), left_slope, right_slope)


FunctionLike = Union[GridFunction, Callable]


@dataclass(frozen=True, eq=False)
class HermiteRule:
    """Gauss-Hermite rule for the standard normal density."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def of_order(cls, order: int = DEFAULT_QUAD_ORDER) -> "HermiteRule":
        return _hermite_rule(int(order))

    def for_variance(self, sigma2: float) -> "HermiteRule":
        """Rule to use for a Gaussian step of variance ``sigma2``.

        Integrands such as cosh(x + sigma z)^m have complex singularities at
        distance ~pi / (2 sigma) from the real axis, so a fixed order loses
        accuracy as sigma grows. The order is scaled linearly in the variance
        above a unit reference, which keeps that error roughly constant.
        """
        if sigma2 <= RULE_REFERENCE_VARIANCE:
            return self
        order = min(math.ceil(self.order * sigma2 / RULE_REFERENCE_VARIANCE), MAX_QUAD_ORDER)
        return self if order <= self.order else _hermite_rule(order)


@lru_cache(maxsize=None)
def _hermite_rule(order: int) -> HermiteRule:
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = roots_hermitenorm(order)
    w = w / math.sqrt(2.0 * math.pi)
    w = w / w.sum()
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return HermiteRule(order, x, w)


def build_grid(model, safety_sigmas: float = DEFAULT_SAFETY_SIGMAS, n_points: int = DEFAULT_POINTS) -> Grid:
    """Grid covering [-L, L] with L = |h| + safety_sigmas * sqrt(xi'(1)) + 2."""
    if not safety_sigmas > 0:
        raise ValueError("safety_sigmas must be positive")
    total = max(float(model.xi(1.0, 1)), 0.0)
    return Grid(abs(model.h) + safety_sigmas * math.sqrt(total) + 2.0, n_points)


def eval_at(f: GridFunction, x):
    """Four-point Lagrange interpolation inside the grid, linear outside."""
    x = np.asarray(x, dtype=float)
    g = f.grid
    v = f.values
    L, dx, n = g.half_width, g.spacing, g.n_points
    u = (x + L) / dx
    i = np.clip(np.floor(u).astype(np.intp), 1, n - 3)
    t = u - i
    tm1, tp1, tm2 = t - 1.0, t + 1.0, t - 2.0
    out = (
        -t * tm1 * tm2 / 6.0 * v[i - 1]
        + tp1 * tm1 * tm2 / 2.0 * v[i]
        - tp1 * t * tm2 / 2.0 * v[i + 1]
        + tp1 * t * tm1 / 6.0 * v[i + 2]
    )
    out = np.where(x < -L, v[0] + f.left_slope * (x + L), out)
    out = np.where(x > L, v[-1] + f.right_slope * (x - L), out)
    return float(out) if out.ndim == 0 else out


def sample_shifted(f: GridFunction, shifts: np.ndarray) -> np.ndarray:
    """``eval_at(f, nodes[:, None] + shifts[None, :])`` for f on its own grid.

    On a uniform grid a constant shift puts every node at the same position
    inside its cell, so each column is a fixed 4-tap filter over a slice of
    the values plus linear tails; only a few edge points per column need the
    general interpolation.
    """
    grid = f.grid
    n, dx, L = grid.n_points, grid.spacing, grid.half_width
    v, x = f.values, grid.nodes
    out = np.empty((len(shifts), n))
    pending = np.zeros((len(shifts), n), dtype=bool)
    for j, s in enumerate(shifts):
        r = s / dx
        o = math.floor(r)
        t = r - o
        # i + o must index a stencil centre in [1, n-3]
        lo, hi = max(0, 1 - o), min(n - 1, n - 3 - o)
        if lo <= hi:
            c, b = hi - lo + 1, lo + o
            tm1, tp1, tm2 = t - 1.0, t + 1.0, t - 2.0
            out[j, lo : hi + 1] = (
                (-t * tm1 * tm2 / 6.0) * v[b - 1 : b - 1 + c]
                + (tp1 * tm1 * tm2 / 2.0) * v[b : b + c]
                - (tp1 * t * tm2 / 2.0) * v[b + 1 : b + 1 + c]
                + (tp1 * t * tm1 / 6.0) * v[b + 2 : b + 2 + c]
            )
        else:
            lo, hi = n, n - 1
        left = int(np.searchsorted(x + s, -L, side="left"))  # x_i + s < -L for i < left
        right = int(np.searchsorted(x + s, L, side="right"))  # x_i + s > L for i >= right
        a = min(left, lo)
        out[j, :a] = v[0] + f.left_slope * (x[:a] + s + L)
        pending[j, a:lo] = True
        b2 = max(right, hi + 1)
        out[j, b2:] = v[-1] + f.right_slope * (x[b2:] + s - L)
        pending[j, hi + 1 : b2] = True
    jj, ii = np.nonzero(pending)
    if jj.size:
        out[jj, ii] = eval_at(f, x[ii] + shifts[jj])
    return out.T


def log_mean_exp(a: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """log sum_j w_j exp(a_ij) along the last axis, max-shifted per row."""
    mx = np.max(a, axis=-1, keepdims=True)
    return mx[..., 0] + np.log(np.exp(a - mx) @ weights)


# below this value of m * (spread of the samples) the cumulant series is used
_SERIES_CUTOFF = 1e-3


def tilted_mean(vals: np.ndarray, m: float, weights: np.ndarray) -> np.ndarray:
    """(1/m) log sum_j w_j exp(m v_j) along the last axis; the mean at m = 0.

    For small m the direct formula cancels catastrophically, so rows with
    m * spread < 1e-3 use the cumulant series k1 + m k2 / 2 + m^2 k3 / 6.
    """
    if m == 0:
        return vals @ weights
    rows = np.atleast_2d(vals)
    out = np.atleast_1d(log_mean_exp(m * rows, weights) / m)
    small = m * np.ptp(rows, axis=-1) < _SERIES_CUTOFF
    if np.any(small):
        v = rows[small]
        k1 = v @ weights
        c = v - k1[:, None]
        out[small] = k1 + 0.5 * m * ((c * c) @ weights) + (m * m / 6.0) * ((c * c * c) @ weights)
    return out.reshape(np.shape(vals)[:-1])


def _evaluate(f: FunctionLike, x: np.ndarray) -> np.ndarray:
    return np.asarray(f(x), dtype=float)


def _sample_points(f: FunctionLike, grid: Grid, shifts: np.ndarray) -> np.ndarray:
    if isinstance(f, GridFunction) and f.grid == grid:
        return sample_shifted(f, shifts)
    return _evaluate(f, grid.nodes[:, None] + shifts[None, :])


def _tilt_values(f: FunctionLike, grid: Grid, m: float, sigma2: float, rule: HermiteRule) -> np.ndarray:
    rule = rule.for_variance(sigma2)
    vals = _sample_points(f, grid, math.sqrt(sigma2) * rule.nodes)
    out = tilted_mean(vals, m, rule.weights)
    if not np.all(np.isfinite(out)):
        raise NumericsError("non-finite smoothing output; check growth of the boundary function")
    return out


def smooth_tilt(f: FunctionLike, m: float, sigma2: float, rule: HermiteRule, grid: Grid | None = None) -> GridFunction:
    """One level of the recursion: (1/m) log E exp(m f(x+z)) on the grid nodes.

    ``f`` may be a :class:`GridFunction` or any vectorised callable with
    ``left_slope``/``right_slope`` attributes (e.g. the exact boundary).
    """
    if m < 0 or sigma2 < 0:
        raise ValueError("smooth_tilt needs m >= 0 and sigma2 >= 0")
    grid = f.grid if grid is None else grid
    if sigma2 == 0:
        if isinstance(f, GridFunction) and f.grid == grid:
            return f
        return GridFunction.sample(grid, f)
    out = _tilt_values(f, grid, m, sigma2, rule)
    return GridFunction(grid, out, f.left_slope, f.right_slope)


def smooth_tilt_at(f: FunctionLike, m: float, sigma2: float, rule: HermiteRule, x: float) -> float:
    """Same as :func:`smooth_tilt` but at a single point, without interpolation."""
    rule = rule.for_variance(sigma2)
    pts = x + math.sqrt(sigma2) * rule.nodes
    vals = _evaluate(f, pts)
    return float(tilted_mean(vals, m, rule.weights))


@dataclass(frozen=True, eq=False)
class TiltWeights:
    """Per-node quadrature weights w_j V(x_i, sqrt(sigma2) z_j) for one level."""

    grid: Grid
    shifts: np.ndarray
    weights: np.ndarray
    log_v: np.ndarray | None

    def expect(self, f: FunctionLike) -> np.ndarray:
        return np.sum(self.weights * _sample_points(f, self.grid, self.shifts), axis=1)


def tilt_weights(phi_next: FunctionLike, phi_cur: GridFunction, m: float, sigma2: float, rule: HermiteRule) -> TiltWeights:
    grid = phi_cur.grid
    rule = rule.for_variance(sigma2)
    shifts = math.sqrt(sigma2) * rule.nodes
    if m == 0:
        return TiltWeights(grid, shifts, np.broadcast_to(rule.weights, (grid.n_points, rule.order)), None)
    log_v = m * (_sample_points(phi_next, grid, shifts) - phi_cur.values[:, None])
    weights = rule.weights[None, :] * np.exp(log_v)
    if not np.all(np.isfinite(weights)):
        raise NumericsError("non-finite tilt weights")
    return TiltWeights(grid, shifts, weights, log_v)


def tilt_weight_expectation(
    f_next: FunctionLike,
    phi_next: FunctionLike,
    phi_cur: GridFunction,
    m: float,
    sigma2: float,
    rule: HermiteRule,
) -> GridFunction:
    """x -> E[V(x, z) f_next(x + z)] with V = exp(m (phi_next(x+z) - phi_cur(x))).

    ``phi_cur`` must be ``smooth_tilt(phi_next, m, sigma2, rule)`` so that
    E V = 1. Tail slopes of the result are those of ``f_next``.
    """
    grid = phi_cur.grid
    ls, rs = getattr(f_next, "left_slope", 0.0), getattr(f_next, "right_slope", 0.0)
    if sigma2 == 0:
        return GridFunction(grid, _evaluate(f_next, grid.nodes), ls, rs)
    out = tilt_weights(phi_next, phi_cur, m, sigma2, rule).expect(f_next)
    return GridFunction(grid, out, ls, rs)


def tilted_entropy(phi_next: FunctionLike, phi_cur: GridFunction, m: float, sigma2: float, rule: HermiteRule) -> GridFunction:
    """x -> E[V log V] for the same V as in :func:`tilt_weight_expectation`."""
    grid = phi_cur.grid
    if sigma2 == 0 or m == 0:
        return GridFunction(grid, np.zeros(grid.n_points))
    tw = tilt_weights(phi_next, phi_cur, m, sigma2, rule)
    return GridFunction(grid, np.sum(tw.weights * tw.log_v, axis=1))


def tilted_covariance(
    f1: FunctionLike,
    f2: FunctionLike,
    phi_next: FunctionLike,
    phi_cur: GridFunction,
    m: float,
    sigma2: float,
    rule: HermiteRule,
) -> GridFunction:
    """x -> E V f1 f2 - E V f1 * E V f2, all shifted by z."""
    grid = phi_cur.grid
    if sigma2 == 0:
        return GridFunction(grid, np.zeros(grid.n_points))
    tw = tilt_weights(phi_next, phi_cur, m, sigma2, rule)
    weights = tw.weights
    a, b = _sample_points(f1, grid, tw.shifts), _sample_points(f2, grid, tw.shifts)
    ea = np.sum(weights * a, axis=1)
    eb = np.sum(weights * b, axis=1)
    # centred form keeps the cancellation small
    cov = np.sum(weights * (a - ea[:, None]) * (b - eb[:, None]), axis=1)
    return GridFunction(grid, cov)


def differentiate(f: GridFunction) -> GridFunction:
    """Fourth-order finite differences; the tails of the result are flat."""
    v, dx = f.values, f.grid.spacing
    d = np.empty_like(v)
    d[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * dx)
    d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * dx)
    d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * dx)
    d[-1] = (25.0 * v[-1] - 48.0 * v[-2] + 36.0 * v[-3] - 16.0 * v[-4] + 3.0 * v[-5]) / (12.0 * dx)
    d[-2] = (3.0 * v[-1] + 10.0 * v[-2] - 18.0 * v[-3] + 6.0 * v[-4] - v[-5]) / (12.0 * dx)
    return GridFunction(f.grid, d, 0.0, 0.0)


# ---------------------------------------------------------------------------
# CSV dump/restore: two header lines with the tail slopes, then x,value rows.


def dump_grid_function(f: GridFunction, path=None) -> str:
    buf = io.StringIO()
    buf.write(f"left_slope,{f.left_slope!r}\n")
    buf.write(f"right_slope,{f.right_slope!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "value"])
    for x, y in zip(f.grid.nodes, f.values):
        w.writerow([repr(float(x)), repr(float(y))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_grid_function(text: str) -> GridFunction:
    lines = text.splitlines()
    try:
        ls_key, ls = lines[0].split(",")
        rs_key, rs = lines[1].split(",")
    except (IndexError, ValueError):
        raise ValueError("grid function CSV needs left_slope and right_slope header lines") from None
    if ls_key != "left_slope" or rs_key != "right_slope":
        raise ValueError("grid function CSV needs left_slope and right_slope header lines")
    rows = list(csv.reader(lines[2:]))
    if not rows or rows[0] != ["x", "value"]:
        raise ValueError("missing x,value column header")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    x = data[:, 0]
    grid = Grid(float(x[-1]), len(x))
    if abs(x[0] + x[-1]) > 1e-9 * grid.half_width or np.max(np.abs(x - grid.nodes)) > 1e-9 * grid.half_width:
        raise ValueError("grid function CSV must sample a uniform grid symmetric about 0")
    return GridFunction(grid, data[:, 1], float(ls), float(rs))


def load_grid_function(path) -> GridFunction:
    return parse_grid_function(Path(path).read_text())
