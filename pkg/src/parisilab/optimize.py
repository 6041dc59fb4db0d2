"""Minimisation of the Parisi objective over k-level step order parameters.

Projected gradient descent with Armijo backtracking and Barzilai-Borwein
trial steps. The feasible set (monotone m and q inside [0, 1]) is handled by
an exact Euclidean projection: pool-adjacent-violators followed by clipping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ModelSpec, StepOrderParameter, linear_term, linear_term_gradient, validate_step
from .numerics import Grid, HermiteRule
from .parisi import LOG2, _defaults, _dm_analytic, _dm_one_sided, compute_u, grad_q, run_recursion
from .probes import random_step, trial_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    k: int = 2
    max_iters: int = 200
    grad_tol: float = 1e-6
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    pin_top: bool = True
    starts: int = 5
    armijo: float = 1e-4

    def __post_init__(self):
        if self.k < 1 or self.max_iters < 1 or self.starts < 1:
            raise ValueError("k, max_iters and starts must be >= 1")
        if not (self.grad_tol > 0 and self.step_init > 0):
            raise ValueError("grad_tol and step_init must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass
class MinimizeResult:
    step: StepOrderParameter
    value: float
    iterations: int
    kkt_residual: float
    history: list[tuple[int, float]]
    stalled: bool = False
    starts: list[dict] = field(default_factory=list)
    iterates: list[StepOrderParameter] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "step": self.step.to_dict(),
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "stalled": self.stalled,
            "starts": self.starts,
        }


def pava(y: Sequence[float], w: Sequence[float] | None = None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    means: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            wt = weights[-2] + weights[-1]
            mu = (weights[-2] * means[-2] + weights[-1] * means[-1]) / wt
            sz = sizes[-2] + sizes[-1]
            del means[-1], weights[-1], sizes[-1]
            means[-1], weights[-1], sizes[-1] = mu, wt, sz
    return np.repeat(means, sizes)


def project_monotone_box(v: Sequence[float]) -> np.ndarray:
    """Euclidean projection onto {0 <= v_1 <= ... <= v_n <= 1}."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    return np.clip(pava(v), 0.0, 1.0)


def project_feasible(m_raw: Sequence[float], q_raw: Sequence[float], pin_top: bool = True) -> StepOrderParameter:
    """Project raw (m, q) onto the feasible set with pinned endpoints.

    ``m_raw`` has k+1 entries and ``q_raw`` k+2; the endpoint entries are
    overwritten (m_0 = 0, q_0 = 0, q_{k+1} = 1, and m_k = 1 when pinned).
    """
    m = np.asarray(m_raw, dtype=float).copy()
    q = np.asarray(q_raw, dtype=float).copy()
    k = len(m) - 1
    if len(q) != k + 2:
        raise ValueError("q_raw must have one more entry than m_raw")
    m[0] = 0.0
    top = k if pin_top else k + 1
    m[1:top] = project_monotone_box(m[1:top])
    if pin_top:
        m[k] = 1.0
    q[0], q[-1] = 0.0, 1.0
    q[1:-1] = project_monotone_box(q[1:-1])
    return StepOrderParameter(tuple(m), tuple(q))


class _Problem:
    """Objective on the free coordinates x = (m_1..m_{k-1 or k}, q_1..q_k)."""

    def __init__(self, model: ModelSpec, k: int, pin_top: bool, grid: Grid, rule: HermiteRule):
        self.model, self.k, self.pin_top, self.grid, self.rule = model, k, pin_top, grid, rule
        self.n_m = k - 1 if pin_top else k
        self.evaluations = 0

    def to_step(self, x: np.ndarray) -> StepOrderParameter:
        m = [0.0, *x[: self.n_m]] + ([1.0] if self.pin_top else [])
        q = [0.0, *x[self.n_m :], 1.0]
        return StepOrderParameter(tuple(m), tuple(q))

    def to_x(self, step: StepOrderParameter) -> np.ndarray:
        return np.array([*step.m[1 : 1 + self.n_m], *step.q[1:-1]])

    def project(self, x: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[: self.n_m] = project_monotone_box(x[: self.n_m])
        out[self.n_m :] = project_monotone_box(x[self.n_m :])
        return out

    def value(self, x: np.ndarray) -> float:
        self.evaluations += 1
        step = self.to_step(x)
        stack = run_recursion(self.model, step, self.grid, self.rule)
        return LOG2 + stack.at_h(stack.phis[0]) - linear_term(self.model.xi, step)

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        step = self.to_step(x)
        model = self.model
        stack = run_recursion(model, step, self.grid, self.rule)
        value = LOG2 + stack.at_h(stack.phis[0]) - linear_term(model.xi, step)
        if not np.any(stack.variances):
            return value, np.zeros_like(x)
        lin_m, lin_q = linear_term_gradient(model.xi, step)
        u = [
            compute_u(model, step, stack, l) if step.m[l] != step.m[l - 1] else 0.0
            for l in range(1, self.k + 1)
        ]
        dq = grad_q(model, step, stack, u) - lin_q
        dm = [
            (_dm_analytic(stack, j) if step.m[j] > 0 else _dm_one_sided(stack, j)) - lin_m[j - 1]
            for j in range(1, self.n_m + 1)
        ]
        return value, np.concatenate([dm, dq])

    def kkt(self, x: np.ndarray, g: np.ndarray) -> float:
        return float(np.linalg.norm(x - self.project(x - g)))


def _descend(problem: _Problem, x0: np.ndarray, cfg: OptimizerConfig) -> MinimizeResult:
    x = problem.project(x0)
    f, g = problem.value_and_grad(x)
    history = [(0, f)]
    iterates = [problem.to_step(x)]
    alpha = cfg.step_init
    x_prev = g_prev = None
    stalled = False
    it = 0
    kkt = problem.kkt(x, g)
    while kkt >= cfg.grad_tol and it < cfg.max_iters:
        it += 1
        if x_prev is not None:
            s, y = x - x_prev, g - g_prev
            sy = float(s @ y)
            # Barzilai-Borwein trial step, kept within sane bounds
            alpha = min(max(float(s @ s) / sy, 1e-6), 1e6) if sy > 0 else min(alpha / cfg.backtrack_factor, 1e6)
        while True:
            x_new = problem.project(x - alpha * g)
            f_new = problem.value(x_new)
            if f_new <= f - cfg.armijo * float(g @ (x - x_new)):
                break
            alpha *= cfg.backtrack_factor
            if alpha < 1e-14:
                stalled = True
                break
        if stalled:
            log.info("line search stalled at iteration %d (kkt %.3g)", it, kkt)
            break
        x_prev, g_prev = x, g
        x = x_new
        f, g = problem.value_and_grad(x)
        history.append((it, f))
        iterates.append(problem.to_step(x))
        kkt = problem.kkt(x, g)
    return MinimizeResult(problem.to_step(x), f, it, kkt, history, stalled, iterates=iterates)


def _step_key(step: StepOrderParameter) -> tuple:
    return (*step.m, *step.q)


def default_start(k: int, pin_top: bool = True) -> StepOrderParameter:
    """Evenly spaced m and q."""
    m = tuple(np.linspace(0.0, 1.0, k + 1)) if pin_top else tuple(np.linspace(0.0, 1.0, k + 2)[:-1])
    q = (0.0, *np.linspace(0.0, 1.0, k + 2)[1:-1], 1.0)
    return StepOrderParameter(m, q)


def minimize(
    model: ModelSpec,
    cfg: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    initial: StepOrderParameter | None = None,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> MinimizeResult:
    """Multi-start projected gradient descent; returns the best start.

    The first start is ``initial`` (or an evenly spaced step), the rest are
    seeded random steps. Ties are broken lexicographically on (m, q).
    """
    grid, rule = _defaults(model, grid, rule)
    problem = _Problem(model, cfg.k, cfg.pin_top, grid, rule)
    first = initial if initial is not None else default_start(cfg.k, cfg.pin_top)
    if first.k != cfg.k:
        raise ValueError(f"initial step has k={first.k}, config has k={cfg.k}")
    starts = [first] + [random_step(trial_rng(seed, s), cfg.k, cfg.pin_top) for s in range(1, cfg.starts)]
    results = []
    for s, st in enumerate(starts):
        res = _descend(problem, problem.to_x(st), cfg)
        if not validate_step(res.step, cfg.pin_top):
            raise AssertionError("optimizer left the feasible set")
        log.info("start %d: value %.12g after %d iterations (kkt %.3g)", s, res.value, res.iterations, res.kkt_residual)
        results.append(res)
    best = min(results, key=lambda r: (r.value, _step_key(r.step)))
    best.starts = [
        {"value": r.value, "iterations": r.iterations, "kkt_residual": r.kkt_residual, "stalled": r.stalled, **r.step.to_dict()}
        for r in results
    ]
    return best


def split_widest_level(step: StepOrderParameter) -> StepOrderParameter:
    """Duplicate the level with the widest q-interval, cutting it at its midpoint.

    m(q) is unchanged as a function, so P_k is unchanged too.
    """
    gaps = np.diff(step.q)
    l = int(np.argmax(gaps))
    mid = 0.5 * (step.q[l] + step.q[l + 1])
    m = step.m[: l + 1] + (step.m[l],) + step.m[l + 1 :]
    q = step.q[: l + 1] + (mid,) + step.q[l + 1 :]
    return StepOrderParameter(m, q)


def rsb_sweep(
    model: ModelSpec,
    k_max: int,
    cfg: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> list[MinimizeResult]:
    """Minimise for k = 1..k_max, warm-starting k+1 from the split k-minimiser."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    grid, rule = _defaults(model, grid, rule)
    results: list[MinimizeResult] = []
    initial = None
    for k in range(1, k_max + 1):
        kcfg = OptimizerConfig(**{**cfg.__dict__, "k": k})
        res = minimize(model, kcfg, seed, initial, grid, rule)
        results.append(res)
        initial = split_widest_level(res.step)
    return results


def dispersion(result: MinimizeResult, value_window: float = 1e-6) -> float:
    """Largest sup-norm distance between start minimisers within ``value_window`` of the best."""
    near = [s for s in result.starts if s["value"] <= result.value + value_window]
    if len(near) < 2:
        return 0.0
    vecs = [np.array(s["m"] + s["q"]) for s in near]
    return max(float(np.max(np.abs(a - b))) for a in vecs for b in vecs)
