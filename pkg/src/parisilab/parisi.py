"""Evaluation of P_k, the Parisi objective and their analytic gradients.

The recursion runs top-down on a fixed grid: Phi_{k+1} is the boundary
function and each level applies one tilted smoothing step with variance
xi'(q_{l+1}) - xi'(q_l). Gradients are assembled by pushing level functions
back down with the tilt weights W_p, which is the same operation as taking
the nested expectation E W_1 ... W_{l-1} (.) evaluated at h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ModelSpec, StepOrderParameter, level_variances, linear_term, xi_eval
from .numerics import (
    Grid,
    GridFunction,
    HermiteRule,
    build_grid,
    differentiate,
    eval_at,
    TiltWeights,
    smooth_tilt,
    tilt_weights,
)

LOG2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class RecursionStack:
    """Phi_0 .. Phi_{k+1} on a common grid; ``phis[l]`` is Phi_l.

    ``phis[k+1]`` is the sampled boundary; the recursion itself reads the
    exact boundary callable, which :meth:`level` returns for l = k+1.
    """

    model: ModelSpec
    step: StepOrderParameter
    grid: Grid
    rule: HermiteRule
    phis: tuple[GridFunction, ...]
    variances: tuple[float, ...]
    _weights: dict = field(default_factory=dict, repr=False)

    def level(self, l: int):
        return self.model.phi if l == self.step.k + 1 else self.phis[l]

    def weights(self, l: int) -> TiltWeights:
        """Tilt weights of level l (V_l at every node), computed once."""
        if l not in self._weights:
            self._weights[l] = tilt_weights(self.level(l + 1), self.phis[l], self.step.m[l], self.variances[l], self.rule)
        return self._weights[l]

    def at_h(self, f: GridFunction) -> float:
        return float(eval_at(f, self.model.h))


@dataclass
class EvalReport:
    p_value: float
    parisi_value: float
    linear_term: float
    refinement_error: float
    grid: dict

    def to_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "parisi_value": self.parisi_value,
            "linear_term": self.linear_term,
            "refinement_error": self.refinement_error,
            "grid": self.grid,
        }


@dataclass
class GradientReport:
    dq: list[float]
    dm: list[float]
    u_values: list[float]
    fallback_levels: list[int] = field(default_factory=list)
    fd_check: dict | None = None

    def to_dict(self) -> dict:
        out = {"dq": self.dq, "dm": self.dm, "u_values": self.u_values, "fallback_levels": self.fallback_levels}
        if self.fd_check is not None:
            out["fd_check"] = self.fd_check
        return out


def _defaults(model: ModelSpec, grid: Grid | None, rule: HermiteRule | None):
    return (build_grid(model) if grid is None else grid, HermiteRule.of_order() if rule is None else rule)


def run_recursion(
    model: ModelSpec,
    step: StepOrderParameter,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> RecursionStack:
    """Phi_{k+1} = Phi, Phi_l = smooth_tilt(Phi_{l+1}, m_l, E z_l^2) for l = k..0.

    Only shapes and signs are checked here (m_l >= 0, nonnegative level
    variances); ordering of m is not required, so finite-difference stencils
    can step across ties. Use :func:`validate_step` at API boundaries.
    """
    grid, rule = _defaults(model, grid, rule)
    k = step.k
    if len(step.q) != k + 2:
        raise ValueError(f"q must have {k + 2} entries")
    if min(step.m) < 0:
        raise ValueError("m entries must be >= 0")
    variances = level_variances(model.xi, step)
    phis: list[GridFunction] = [None] * (k + 2)
    phis[k + 1] = GridFunction.sample(grid, model.phi)
    upper = model.phi
    for l in range(k, -1, -1):
        phis[l] = smooth_tilt(upper, step.m[l], variances[l], rule, grid)
        upper = phis[l]
    return RecursionStack(model, step, grid, rule, tuple(phis), tuple(variances))


def parisi_p(model: ModelSpec, step: StepOrderParameter, grid: Grid | None = None, rule: HermiteRule | None = None) -> float:
    """P_k(m, q) = Phi_0(h)."""
    stack = run_recursion(model, step, grid, rule)
    return stack.at_h(stack.phis[0])


def parisi_objective(
    model: ModelSpec,
    step: StepOrderParameter,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
    refine: bool = True,
) -> EvalReport:
    """log 2 + P_k - (1/2) int m(q) q xi''(q) dq, with a grid-doubling error estimate."""
    grid, rule = _defaults(model, grid, rule)
    p = parisi_p(model, step, grid, rule)
    lin = linear_term(model.xi, step)
    err = 0.0
    if refine:
        err = abs(parisi_p(model, step, grid.refined(), rule) - p)
    return EvalReport(p, LOG2 + p - lin, lin, err, grid.summary())


def _push_down(stack: RecursionStack, f: GridFunction, level: int) -> float:
    """E W_0 ... W_{level-1} f(Z_level), evaluated at h."""
    for p in range(level - 1, -1, -1):
        if stack.variances[p] > 0:
            f = GridFunction(stack.grid, stack.weights(p).expect(f), f.left_slope, f.right_slope)
    return stack.at_h(f)


def compute_u(model: ModelSpec, step: StepOrderParameter, stack: RecursionStack, l: int) -> float:
    """U_l = E W_1 ... W_{l-1} (Phi_l'(Z_l))^2."""
    if not 1 <= l <= step.k:
        raise IndexError(f"U_l defined for 1 <= l <= {step.k}")
    deriv = differentiate(stack.phis[l])
    u = _push_down(stack, deriv.map(np.square), l)
    if u < -1e-10:
        raise FloatingPointError(f"U_{l} = {u} is negative beyond tolerance")
    return u


def grad_q(model: ModelSpec, step: StepOrderParameter, stack: RecursionStack, u_values: Sequence[float] | None = None) -> np.ndarray:
    """dP_k/dq_l = -(1/2) (m_l - m_{l-1}) xi''(q_l) U_l for l = 1..k."""
    k = step.k
    if u_values is None:
        u_values = [compute_u(model, step, stack, l) for l in range(1, k + 1)]
    out = np.zeros(k)
    for l in range(1, k + 1):
        jump = step.m[l] - step.m[l - 1]
        curv = xi_eval(model.xi, step.q[l], 2)
        if jump != 0 and curv != 0:
            out[l - 1] = -0.5 * jump * curv * u_values[l - 1]
    return out


def _dm_analytic(stack: RecursionStack, j: int) -> float:
    step = stack.step
    mj = step.m[j]
    if stack.variances[j] == 0:
        return 0.0
    tw = stack.weights(j)
    g = GridFunction(stack.grid, np.sum(tw.weights * tw.log_v, axis=1) / mj)
    return _push_down(stack, g, j) / mj


def _with_m(step: StepOrderParameter, j: int, value: float) -> StepOrderParameter:
    m = list(step.m)
    m[j] = value
    return StepOrderParameter(tuple(m), step.q)


def _dm_one_sided(stack: RecursionStack, j: int, h: float = 1e-4) -> float:
    model, step = stack.model, stack.step
    p0 = stack.at_h(stack.phis[0])
    p1 = parisi_p(model, _with_m(step, j, step.m[j] + h), stack.grid, stack.rule)
    p2 = parisi_p(model, _with_m(step, j, step.m[j] + 2 * h), stack.grid, stack.rule)
    return (-3.0 * p0 + 4.0 * p1 - p2) / (2.0 * h)


def grad_m(model: ModelSpec, step: StepOrderParameter, stack: RecursionStack) -> np.ndarray:
    """dP_k/dm_j for j = 1..k.

    For m_j > 0 this is m_j^{-1} E W_1...W_{j-1} g_j(Z_j) with
    g_j = m_j^{-1} E_j[W_j log W_j]; at m_j = 0 a one-sided second-order
    difference is used instead.
    """
    return np.array([_dm_analytic(stack, j) if step.m[j] > 0 else _dm_one_sided(stack, j) for j in range(1, step.k + 1)])


def gradients(
    model: ModelSpec,
    step: StepOrderParameter,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
    stack: RecursionStack | None = None,
    fd_check: bool = False,
) -> GradientReport:
    if stack is None:
        stack = run_recursion(model, step, grid, rule)
    u = [compute_u(model, step, stack, l) for l in range(1, step.k + 1)]
    dq = grad_q(model, step, stack, u)
    dm = grad_m(model, step, stack)
    report = GradientReport(
        dq.tolist(), dm.tolist(), u, [j for j in range(1, step.k + 1) if step.m[j] == 0]
    )
    if fd_check:
        report.fd_check = finite_difference_check(model, step, stack.grid, stack.rule, analytic=report)
    return report


# ---------------------------------------------------------------------------
# finite-difference cross-check


def _with_q(step: StepOrderParameter, l: int, value: float) -> StepOrderParameter:
    q = list(step.q)
    q[l] = value
    return StepOrderParameter(step.m, tuple(q))


def _central(fn: Callable[[float], float], x: float, h: float) -> tuple[float, float]:
    """Central difference with step h and its Richardson extrapolation."""
    d1 = (fn(x + h) - fn(x - h)) / (2 * h)
    d2 = (fn(x + h / 2) - fn(x - h / 2)) / h
    return d1, (4 * d2 - d1) / 3


def finite_difference_check(
    model: ModelSpec,
    step: StepOrderParameter,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
    analytic: GradientReport | None = None,
    h_q: float = 1e-4,
    h_m: float = 1e-4,
    floor: float = 1e-8,
) -> dict:
    """Compare analytic gradients with central differences of :func:`parisi_p`.

    q_l is only differenced when the stencil stays inside [q_{l-1}, q_{l+1}]
    and m_l != m_{l-1} (otherwise the partial is exactly zero and the
    difference quotient is pure grid noise); m_j uses a forward stencil when
    m_j < 2 h_m. Relative errors are taken wherever |FD| > ``floor``.
    """
    grid, rule = _defaults(model, grid, rule)
    if analytic is None:
        analytic = gradients(model, step, grid, rule)
    k = step.k

    fd_dq: list[float | None] = []
    for l in range(1, k + 1):
        ql = step.q[l]
        if ql - h_q < step.q[l - 1] or ql + h_q > step.q[l + 1] or step.m[l] == step.m[l - 1]:
            fd_dq.append(None)
            continue
        d, _ = _central(lambda v: parisi_p(model, _with_q(step, l, v), grid, rule), ql, h_q)
        fd_dq.append(d)

    fd_dm: list[float | None] = []
    for j in range(1, k + 1):
        mj = step.m[j]
        f = lambda v: parisi_p(model, _with_m(step, j, v), grid, rule)  # noqa: E731
        if mj >= 2 * h_m:
            d, _ = _central(f, mj, h_m)
        else:
            d = (-3 * f(mj) + 4 * f(mj + h_m) - f(mj + 2 * h_m)) / (2 * h_m)
        fd_dm.append(d)

    def rel_errors(an, fd):
        out = []
        for a, d in zip(an, fd):
            if d is None or abs(d) <= floor:
                out.append(None)
            else:
                out.append(abs(a - d) / abs(d))
        return out

    rq, rm = rel_errors(analytic.dq, fd_dq), rel_errors(analytic.dm, fd_dm)
    errs = [e for e in rq + rm if e is not None]
    return {
        "fd_dq": fd_dq,
        "fd_dm": fd_dm,
        "rel_err_dq": rq,
        "rel_err_dm": rm,
        "max_rel_error": max(errs) if errs else 0.0,
        "h_q": h_q,
        "h_m": h_m,
    }


# ---------------------------------------------------------------------------
# general order parameters via step refinement


@dataclass
class FunctionalResult:
    p_value: float
    parisi_value: float
    pieces: int
    change: float
    converged: bool
    history: list[tuple[int, float]]


def step_from_function(m_func: Callable[[float], float], pieces: int) -> StepOrderParameter:
    """Midpoint step approximation of a nondecreasing m on ``pieces`` equal cells.

    The zero-width first and last levels keep m_0 = 0 and m_k = 1 formally.
    """
    edges = np.linspace(0.0, 1.0, pieces + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    vals = [float(m_func(t)) for t in mids]
    m = (0.0, *vals, 1.0)
    q = (0.0, *edges[:-1].tolist(), 1.0, 1.0)
    return StepOrderParameter(m, q)


def evaluate_functional(
    model: ModelSpec,
    m_func: Callable[[float], float],
    tol: float = 1e-7,
    start_pieces: int = 8,
    max_pieces: int = 1024,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> FunctionalResult:
    """P(m) for a general nondecreasing m by dyadic step refinement.

    Stops when two successive refinements differ by less than ``tol``.
    """
    grid, rule = _defaults(model, grid, rule)
    pieces = start_pieces
    step = step_from_function(m_func, pieces)
    prev = parisi_p(model, step, grid, rule)
    history = [(pieces, prev)]
    change = math.inf
    while pieces < max_pieces:
        pieces *= 2
        step = step_from_function(m_func, pieces)
        cur = parisi_p(model, step, grid, rule)
        history.append((pieces, cur))
        change = abs(cur - prev)
        prev = cur
        if change < tol:
            break
    return FunctionalResult(
        prev, LOG2 + prev - linear_term(model.xi, step), pieces, change, change < tol, history
    )
