"""Numerical probes of the convexity-type statements about P_k.

Asserted probes check proved statements and fail when the worst slack drops
below ``-tolerance``. Reported probes (the open convexity question) only
collect slacks; their findings are data and never fail a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ModelSpec, StepOrderParameter, xi_eval
from .numerics import Grid, HermiteRule, tilt_weight_expectation, tilted_covariance, tilted_entropy
from .parisi import RecursionStack, _defaults, compute_u, grad_m, parisi_p, run_recursion

ASSERTED = "Asserted"
REPORTED = "Reported"


@dataclass
class ProbeReport:
    probe_name: str
    instances: int
    worst_slack: float
    verdict: str
    tolerance: float
    violating_instance: dict | None = None
    slacks: list[float] = field(default_factory=list, repr=False)
    records: list[dict] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.verdict == REPORTED or self.worst_slack >= -self.tolerance

    def to_dict(self) -> dict:
        return {
            "probe_name": self.probe_name,
            "instances": self.instances,
            "worst_slack": self.worst_slack,
            "verdict": self.verdict,
            "violating_instance": self.violating_instance,
        }


def _finish(name: str, verdict: str, tol: float, slacks: list[float], records: list[dict]) -> ProbeReport:
    if not slacks:
        return ProbeReport(name, 0, math.inf, verdict, tol)
    worst = int(np.argmin(slacks))
    bad = records[worst] if slacks[worst] < -tol else None
    return ProbeReport(name, len(slacks), float(slacks[worst]), verdict, tol, bad, list(slacks), records)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per trial, derived from (seed, trial)."""
    return np.random.default_rng([int(seed), int(trial)])


def random_interior(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.sort(rng.uniform(0.0, 1.0, size))


def random_q(rng: np.random.Generator, k: int) -> tuple[float, ...]:
    return (0.0, *random_interior(rng, k).tolist(), 1.0)


def random_step(rng: np.random.Generator, k: int, pin_top: bool = True) -> StepOrderParameter:
    """Sorted uniform interior m (m_k = 1 when pinned) and sorted uniform interior q."""
    if pin_top:
        m = (0.0, *random_interior(rng, k - 1).tolist(), 1.0)
    else:
        m = (0.0, *random_interior(rng, k).tolist())
    return StepOrderParameter(m, random_q(rng, k))


def _k_of(q_shared, k):
    return len(q_shared) - 2 if q_shared is not None else k


def _validate_trials(trials: int):
    if trials < 1:
        raise ValueError("trials must be >= 1")


def one_sided_slack(
    model: ModelSpec, m: StepOrderParameter, n: StepOrderParameter, grid: Grid, rule: HermiteRule
) -> float:
    """P_k(n) - P_k(m) - grad P_k(m) . (n - m), on a shared q."""
    stack = run_recursion(model, m, grid, rule)
    pm = stack.at_h(stack.phis[0])
    dm = grad_m(model, m, stack)
    pn = parisi_p(model, n, grid, rule)
    diff = np.asarray(n.m[1:]) - np.asarray(m.m[1:])
    return float(pn - pm - np.dot(dm, diff))


def probe_one_sided_convexity(
    model: ModelSpec,
    q_shared: Sequence[float] | None = None,
    trials: int = 20,
    seed: int = 0,
    k: int = 3,
    tol: float = 1e-6,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> ProbeReport:
    """Gradient inequality along componentwise-ordered pairs (both orientations)."""
    _validate_trials(trials)
    grid, rule = _defaults(model, grid, rule)
    k = _k_of(q_shared, k)
    slacks, records = [], []
    for t in range(trials):
        rng = trial_rng(seed, t)
        q = tuple(q_shared) if q_shared is not None else random_q(rng, k)
        a, b = random_interior(rng, k - 1), random_interior(rng, k - 1)
        hi, lo = np.maximum(a, b), np.minimum(a, b)
        upper = StepOrderParameter((0.0, *hi.tolist(), 1.0), q)
        lower = StepOrderParameter((0.0, *lo.tolist(), 1.0), q)
        # even trials expand around the upper point, odd ones around the lower
        m, n = (upper, lower) if t % 2 == 0 else (lower, upper)
        s = one_sided_slack(model, m, n, grid, rule)
        slacks.append(s)
        records.append({"trial": t, "m": list(m.m), "n": list(n.m), "q": list(q), "slack": s})
    return _finish("one_sided_convexity", ASSERTED, tol, slacks, records)


def raise_coordinate(m: Sequence[float], j: int, delta: float) -> tuple[float, ...]:
    """m + delta e_j, then lift later entries so the sequence stays nondecreasing."""
    out = list(m)
    out[j] += delta
    for i in range(j + 1, len(out)):
        out[i] = max(out[i], out[j])
    return tuple(out)


def u_slopes(model: ModelSpec, step: StepOrderParameter, delta: float, grid: Grid, rule: HermiteRule) -> np.ndarray:
    """slopes[l-1, j-1] = (U_l(m + delta e_j) - U_l(m)) / delta."""
    k = step.k
    base_stack = run_recursion(model, step, grid, rule)
    base = np.array([compute_u(model, step, base_stack, l) for l in range(1, k + 1)])
    out = np.zeros((k, k))
    for j in range(1, k + 1):
        pert = StepOrderParameter(raise_coordinate(step.m, j, delta), step.q)
        stack = run_recursion(model, pert, grid, rule)
        for l in range(1, k + 1):
            out[l - 1, j - 1] = (compute_u(model, pert, stack, l) - base[l - 1]) / delta
    return out


def probe_u_monotonicity(
    model: ModelSpec,
    step: StepOrderParameter | None = None,
    l: int | None = None,
    trials: int = 10,
    seed: int = 0,
    k: int = 3,
    delta: float = 1e-3,
    tol: float = 1e-7,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> ProbeReport:
    """Forward-difference slopes of U_l in every m_j must be >= -tol.

    With ``step`` given, only that instance is probed; otherwise ``trials``
    random steps with ``k`` levels. ``l=None`` checks every level.
    """
    _validate_trials(trials)
    grid, rule = _defaults(model, grid, rule)
    slacks, records = [], []
    instances = [step] if step is not None else [random_step(trial_rng(seed, t), k) for t in range(trials)]
    for t, st in enumerate(instances):
        slopes = u_slopes(model, st, delta, grid, rule)
        levels = range(1, st.k + 1) if l is None else [l]
        for ll in levels:
            for j in range(1, st.k + 1):
                s = float(slopes[ll - 1, j - 1])
                slacks.append(s)
                records.append({"trial": t, "l": ll, "j": j, "m": list(st.m), "q": list(st.q), "slope": s})
    return _finish("u_monotonicity", ASSERTED, tol, slacks, records)


def is_ordered(a: Sequence[float], b: Sequence[float]) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) or np.all(a >= b))


def midpoint_slack(model, m: StepOrderParameter, n: StepOrderParameter, grid, rule) -> float:
    """(P(m) + P(n)) / 2 - P((m + n) / 2)."""
    mid = StepOrderParameter(tuple(0.5 * (a + b) for a, b in zip(m.m, n.m)), m.q)
    return 0.5 * (parisi_p(model, m, grid, rule) + parisi_p(model, n, grid, rule)) - parisi_p(model, mid, grid, rule)


def probe_midpoint_convexity(
    model: ModelSpec,
    q_shared: Sequence[float] | None = None,
    trials: int = 20,
    seed: int = 0,
    k: int = 3,
    crossing_only: bool = False,
    tol: float = 1e-6,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> ProbeReport:
    """Midpoint convexity on arbitrary pairs; the verdict is always Reported."""
    _validate_trials(trials)
    grid, rule = _defaults(model, grid, rule)
    k = _k_of(q_shared, k)
    if crossing_only and k < 3:
        raise ValueError("crossing pairs need at least two free m coordinates (k >= 3)")
    slacks, records = [], []
    for t in range(trials):
        rng = trial_rng(seed, t)
        q = tuple(q_shared) if q_shared is not None else random_q(rng, k)
        while True:
            a, b = random_interior(rng, k - 1), random_interior(rng, k - 1)
            if not crossing_only or not is_ordered(a, b):
                break
        m = StepOrderParameter((0.0, *a.tolist(), 1.0), q)
        n = StepOrderParameter((0.0, *b.tolist(), 1.0), q)
        s = midpoint_slack(model, m, n, grid, rule)
        slacks.append(s)
        records.append({"trial": t, "m": list(m.m), "n": list(n.m), "q": list(q), "crossing": not is_ordered(a, b), "slack": s})
    return _finish("midpoint_convexity", REPORTED, tol, slacks, records)


def l1_distance(a: StepOrderParameter, b: StepOrderParameter) -> float:
    """int_0^1 |m_a(q) - m_b(q)| dq for two step functions."""
    cuts = np.unique(np.concatenate([a.q, b.q]))
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        va = a.m[int(np.searchsorted(a.q, mid, side="right")) - 1]
        vb = b.m[int(np.searchsorted(b.q, mid, side="right")) - 1]
        total += abs(va - vb) * (hi - lo)
    return total


def probe_l1_continuity(
    model: ModelSpec,
    trials: int = 20,
    seed: int = 0,
    k: int = 3,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
) -> ProbeReport:
    """|P(m) - P(n)| <= 2 C ||m - n||_1 with C = xi''(1) sup|Phi'|^2 / 2."""
    _validate_trials(trials)
    grid, rule = _defaults(model, grid, rule)
    lip = 0.5 * xi_eval(model.xi, 1.0, 2) * max(abs(model.phi.left_slope), abs(model.phi.right_slope)) ** 2
    slacks, records = [], []
    for t in range(trials):
        rng = trial_rng(seed, t)
        a, b = random_step(rng, k), random_step(rng, k)
        dist = l1_distance(a, b)
        gap = abs(parisi_p(model, a, grid, rule) - parisi_p(model, b, grid, rule))
        slacks.append(2.0 * lip * dist - gap)
        records.append({"trial": t, "a": a.to_dict(), "b": b.to_dict(), "l1": dist, "gap": gap, "constant": lip})
    return _finish("l1_continuity", ASSERTED, 1e-9, slacks, records)


# ---------------------------------------------------------------------------
# function classes C and C'


def derivative_stack(stack: RecursionStack):
    """Phi_l' for l = 0..k via Phi_l' = E_l V_l Phi_{l+1}'(x + z_l)."""
    step, model = stack.step, stack.model
    k = step.k
    out = [None] * (k + 2)
    upper = model.phi.derivative
    for l in range(k, -1, -1):
        out[l] = tilt_weight_expectation(upper, stack.level(l + 1), stack.phis[l], step.m[l], stack.variances[l], stack.rule)
        upper = out[l]
    return out


def probe_function_classes(
    model: ModelSpec,
    step: StepOrderParameter,
    grid: Grid | None = None,
    rule: HermiteRule | None = None,
    sym_tol: float = 1e-8,
    mono_tol: float = 1e-9,
) -> ProbeReport:
    """Grid scan of the class memberships behind U_l monotonicity.

    (a) Phi_l even, nonnegative, convex; Phi_l' odd and nondecreasing.
    (b) E V f1 f2 >= E V f1 E V f2 for x >= 0 with f1 = Phi_{l+1}, f2 = Phi_{l+1}'.
    (f) E V log V even, nonnegative and nondecreasing on x >= 0.

    Symmetry residuals r become slacks -r * mono_tol / sym_tol, so a
    residual of ``sym_tol`` sits exactly at the failure threshold.
    """
    stack = run_recursion(model, step, grid, rule)
    grid, rule = stack.grid, stack.rule
    x = grid.nodes
    half = x >= 0
    derivs = derivative_stack(stack)
    slacks, records = [], []

    def add(check: str, level: int, margins: np.ndarray, where: np.ndarray):
        i = int(np.argmin(margins))
        slacks.append(float(margins[i]))
        records.append({"check": check, "level": level, "x": float(where[i]), "slack": float(margins[i])})

    def symmetry(check, level, v, odd=False):
        resid = np.abs(v + v[::-1]) if odd else np.abs(v - v[::-1])
        add(check, level, -resid * (mono_tol / sym_tol), x)

    for l in range(step.k + 2):
        v = stack.phis[l].values
        symmetry("a:even", l, v)
        add("a:nonneg", l, v + 0.0, x)
        add("a:convex", l, np.diff(v, 2), x[1:-1])
        if l <= step.k:
            d = derivs[l].values
            symmetry("a:deriv_odd", l, d, odd=True)
            add("a:deriv_nondecreasing", l, np.diff(d), x[1:])

    for l in range(step.k + 1):
        var, ml = stack.variances[l], step.m[l]
        if var == 0:
            continue
        f1 = stack.level(l + 1)
        f2 = model.phi.derivative if l == step.k else derivs[l + 1]
        cov = tilted_covariance(f1, f2, f1, stack.phis[l], ml, var, rule).values
        add("b:covariance", l, cov[half], x[half])
        origin = grid.n_points // 2
        add("b:covariance_origin", l, cov[origin : origin + 1], x[origin : origin + 1])
        ent = tilted_entropy(f1, stack.phis[l], ml, var, rule).values
        symmetry("f:even", l, ent)
        add("f:nonneg", l, ent[half], x[half])
        add("f:nondecreasing", l, np.diff(ent[half]), x[half][1:])

    return _finish("function_classes", ASSERTED, mono_tol, slacks, records)
