"""The one-level functional f(m) = (1/m) log E exp(m eta) and its consequences.

Here eta = Phi(h + sigma z) for a standard Gaussian z (``dim == 1``), or
eta = Phi(|h_vec + sigma z_vec|) in ``dim`` dimensions, where only |h_vec|
matters. f(m) is the log of the L_m norm of exp(eta), and its convexity in m
gives a third-cumulant inequality, an interpolation bound for the moment
generating function and a sub-Gaussian/sub-exponential tail bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import ive, gammaln

from .numerics import HermiteRule, log_mean_exp
from .probes import ASSERTED, REPORTED, ProbeReport, _finish

DEFAULT_ORDER = 201
DEFAULT_M_GRID = tuple(round(0.1 * i, 10) for i in range(1, 31))


@dataclass(frozen=True)
class ScalarModel:
    phi: Callable
    h: float = 0.0
    sigma: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def from_model(cls, model, dim: int = 1) -> "ScalarModel":
        """sigma^2 = xi'(1) and the boundary function of a :class:`ModelSpec`."""
        return cls(model.phi, model.h, math.sqrt(model.xi(1.0, 1)), dim)


# ---------------------------------------------------------------------------
# quadrature for the law of eta


@lru_cache(maxsize=64)
def _radial_rule(h: float, dim: int, panels: int, per_panel: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for R = |h_vec + z_vec| (noncentral chi, unit scale).

    Composite Gauss-Legendre on [0, h + 10 sqrt(dim)], weights normalised to
    sum to one.
    """
    upper = h + 10.0 * math.sqrt(dim)
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(0.0, upper, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()
    wr = (0.5 * (b - a) * w[None, :]).ravel()
    nu = 0.5 * dim - 1.0
    if h == 0:
        log_pdf = (dim - 1) * np.log(r) - 0.5 * r * r - (0.5 * dim - 1) * math.log(2.0) - gammaln(0.5 * dim)
    else:
        # r^{d/2} h^{1-d/2} exp(-(r^2+h^2)/2) I_nu(r h), with I_nu = ive * e^{r h}
        log_pdf = 0.5 * dim * np.log(r) + (1 - 0.5 * dim) * math.log(h) - 0.5 * (r - h) ** 2 + np.log(ive(nu, r * h))
    dens = wr * np.exp(log_pdf)
    return r, dens / dens.sum()


def eta_measure(sm: ScalarModel, rule: HermiteRule | None = None, panels: int = 64, per_panel: int = 16):
    """Discrete law (values, weights) approximating eta."""
    if sm.dim == 1:
        rule = HermiteRule.of_order(DEFAULT_ORDER) if rule is None else rule
        return np.asarray(sm.phi(sm.h + sm.sigma * rule.nodes), dtype=float), rule.weights
    r, w = _radial_rule(abs(float(sm.h)) / sm.sigma, sm.dim, panels, per_panel)
    return np.asarray(sm.phi(sm.sigma * r), dtype=float), w


def _log_mgf(eta: np.ndarray, w: np.ndarray, m: float) -> float:
    return float(log_mean_exp(m * eta, w))


def f_of_m(sm: ScalarModel, m: float, rule: HermiteRule | None = None) -> float:
    """(1/m) log E exp(m eta); at m = 0 the continuous extension E eta."""
    if m < 0:
        raise ValueError("m must be >= 0")
    eta, w = eta_measure(sm, rule)
    if m == 0:
        return float(eta @ w)
    out = _log_mgf(eta, w, m) / m
    if not math.isfinite(out):
        raise FloatingPointError("non-finite f(m); Phi grows too fast")
    return out


def f_second_derivative(sm: ScalarModel, m: float, rule: HermiteRule | None = None) -> float:
    """m^-3 (E V log^2 V - (E V log V)^2 - 2 E V log V), V = exp(m (eta - f(m)))."""
    if not m > 0:
        raise ValueError("f'' moment formula needs m > 0")
    eta, w = eta_measure(sm, rule)
    log_v = m * eta - _log_mgf(eta, w, m)
    v = w * np.exp(log_v)
    e1 = float(v @ log_v)
    e2 = float(v @ (log_v * log_v))
    return (e2 - e1 * e1 - 2.0 * e1) / m**3


def third_cumulant(sm: ScalarModel, rule: HermiteRule | None = None) -> float:
    """E eta^3 - 3 E eta^2 E eta + 2 (E eta)^3, computed as a central moment."""
    eta, w = eta_measure(sm, rule)
    mu = float(eta @ w)
    return float(w @ (eta - mu) ** 3)


def log_mgf(sm: ScalarModel, lam: float, rule: HermiteRule | None = None) -> float:
    eta, w = eta_measure(sm, rule)
    return _log_mgf(eta, w, lam)


def check_interpolation_bound(
    sm: ScalarModel, lambdas: Sequence[float] = tuple(i / 10 for i in range(11)), rule: HermiteRule | None = None, tol: float = 1e-9
) -> ProbeReport:
    """log E exp(lam eta) <= lam^2 log E exp(eta) + lam (1 - lam) E eta."""
    eta, w = eta_measure(sm, rule)
    mean = float(eta @ w)
    k1 = _log_mgf(eta, w, 1.0)
    slacks, records = [], []
    for lam in lambdas:
        if not 0 <= lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        left = _log_mgf(eta, w, lam) if lam else math.log(float(w.sum()))
        right = lam * lam * k1 + lam * (1 - lam) * mean
        slacks.append(right - left)
        records.append({"lambda": lam, "log_left": left, "log_right": right})
    return _finish("interpolation_bound", ASSERTED, tol, slacks, records)


def concentration_bound(t: float, a: float) -> float:
    """exp(-t^2 / 4A) for t <= 2A, exp(A - t) beyond."""
    if t <= 2 * a:
        return math.exp(-t * t / (4 * a)) if a > 0 else 1.0
    return math.exp(a - t)


def sample_eta(sm: ScalarModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if sm.dim == 1:
        return np.asarray(sm.phi(sm.h + sm.sigma * rng.standard_normal(n)), dtype=float)
    z = sm.sigma * rng.standard_normal((n, sm.dim))
    z[:, 0] += abs(sm.h)
    return np.asarray(sm.phi(np.sqrt(np.einsum("ij,ij->i", z, z))), dtype=float)


def check_concentration(
    sm: ScalarModel,
    t_grid: Sequence[float] = (0.5, 1.0, 1.5),
    mc_samples: int = 1_000_000,
    seed: int = 0,
    rule: HermiteRule | None = None,
    chunk: int = 1 << 18,
) -> ProbeReport:
    """Monte Carlo tail P(eta >= E eta + t) against the bound with A = log E exp(eta - E eta).

    Slack is bound + 3 binomial standard errors - empirical tail. Samples
    are drawn in chunks from spawned child generators, so the counts do not
    depend on the chunking order.
    """
    if mc_samples < 100_000:
        raise ValueError("mc_samples must be >= 1e5")
    eta, w = eta_measure(sm, rule)
    mean = float(eta @ w)
    a = _log_mgf(eta, w, 1.0) - mean
    if not math.isfinite(a):
        return ProbeReport("concentration", 0, math.inf, REPORTED, 0.0, {"note": "A is infinite; bound not applicable"})
    t_arr = np.asarray(t_grid, dtype=float)
    counts = np.zeros(len(t_arr), dtype=np.int64)
    sizes = [chunk] * (mc_samples // chunk) + ([mc_samples % chunk] if mc_samples % chunk else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    for size, child in zip(sizes, children):
        sample = sample_eta(sm, size, np.random.default_rng(child))
        counts += (sample[:, None] >= mean + t_arr[None, :]).sum(axis=0)
    slacks, records = [], []
    for t, c in zip(t_arr, counts):
        p = c / mc_samples
        se = math.sqrt(p * (1 - p) / mc_samples)
        bound = concentration_bound(float(t), a)
        slacks.append(bound + 3 * se - p)
        records.append({"t": float(t), "tail": p, "stderr": se, "bound": bound, "A": a})
    return _finish("concentration", ASSERTED, 0.0, slacks, records)


def second_differences(ms: Sequence[float], fs: Sequence[float]) -> np.ndarray:
    """Second differences on a possibly uneven grid, equal to the raw
    f[i+1] - 2 f[i] + f[i-1] when the spacing is uniform."""
    ms, fs = np.asarray(ms, dtype=float), np.asarray(fs, dtype=float)
    h1, h2 = np.diff(ms)[:-1], np.diff(ms)[1:]
    slope_jump = (fs[2:] - fs[1:-1]) / h2 - (fs[1:-1] - fs[:-2]) / h1
    hbar = 0.5 * (h1 + h2)
    return slope_jump * hbar


def check_log_convexity(
    sm: ScalarModel, m_grid: Sequence[float] = DEFAULT_M_GRID, rule: HermiteRule | None = None, tol: float = 1e-8
) -> ProbeReport:
    """Second differences of m -> f(m) on ``m_grid`` must be >= -tol."""
    ms = np.asarray(m_grid, dtype=float)
    if ms.size < 3 or np.any(np.diff(ms) <= 0) or ms[0] <= 0:
        raise ValueError("m_grid must be positive, strictly increasing, with >= 3 points")
    fs = [f_of_m(sm, m, rule) for m in ms]
    d2 = second_differences(ms, fs)
    records = [{"m": float(m), "second_difference": float(d)} for m, d in zip(ms[1:-1], d2)]
    return _finish("log_convexity", ASSERTED, tol, d2.tolist(), records)


def scan(sm: ScalarModel, m_grid: Sequence[float] = DEFAULT_M_GRID, rule: HermiteRule | None = None) -> list[tuple[float, float, float]]:
    """Rows (m, f(m), f''(m)) for plotting."""
    return [(float(m), f_of_m(sm, m, rule), f_second_derivative(sm, m, rule)) for m in m_grid]


def check_second_derivative_sign(
    sm: ScalarModel, m_grid: Sequence[float] = DEFAULT_M_GRID, rule: HermiteRule | None = None, tol: float = 1e-9
) -> ProbeReport:
    """The moment formula for f''(m) must be nonnegative on ``m_grid``."""
    values = [f_second_derivative(sm, m, rule) for m in m_grid]
    records = [{"m": float(m), "f_second_derivative": v} for m, v in zip(m_grid, values)]
    return _finish("f_second_derivative", ASSERTED, tol, values, records)


def check_third_cumulant(sm: ScalarModel, rule: HermiteRule | None = None, tol: float = 1e-10) -> ProbeReport:
    k3 = third_cumulant(sm, rule)
    return _finish("third_cumulant", ASSERTED, tol, [k3], [{"third_cumulant": k3}])
