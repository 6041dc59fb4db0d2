"""Model ingredients: the mixture function xi, the boundary function Phi,
the external field h and step order parameters.

Everything here is immutable; the operations are closed-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .numerics import GridFunction, differentiate, eval_at, load_grid_function


class ConfigError(ValueError):
    """Invalid model or run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


class InvalidStepError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureFunction:
    """Even polynomial xi(x) = sum_p c_p x^p with nonnegative coefficients.

    Use :meth:`sk` for the SK form beta^2 x^2 / 2 and :meth:`mixture` for
    the mixed p-spin form sum_p beta_p^2 x^p.
    """

    coefficients: tuple[tuple[int, float], ...]
    label: str = "mixture"

    def __post_init__(self):
        for p, c in self.coefficients:
            if p < 2 or p % 2:
                raise ConfigError("xi.terms", f"power {p} must be even and >= 2")
            if not c >= 0 or not math.isfinite(c):
                raise ConfigError("xi.terms", f"coefficient of x^{p} must be finite and >= 0")

    @classmethod
    def sk(cls, beta: float) -> "MixtureFunction":
        if beta < 0:
            raise ConfigError("xi.terms", "beta must be >= 0")
        return cls(((2, 0.5 * beta * beta),), label=f"sk(beta={beta:g})")

    @classmethod
    def mixture(cls, betas: Mapping[int, float]) -> "MixtureFunction":
        for p, b in betas.items():
            if not b > 0:
                raise ConfigError("xi.terms", f"beta_{p} must be > 0")
        terms = tuple(sorted((int(p), float(b) ** 2) for p, b in betas.items()))
        return cls(terms, label="mixture(" + ",".join(f"{p}:{b:g}" for p, b in sorted(betas.items())) + ")")

    def __call__(self, x, order: int = 0):
        return xi_eval(self, x, order)


def xi_eval(xi: MixtureFunction, x, order: int = 0):
    """xi(x), xi'(x) or xi''(x) by direct polynomial evaluation."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for p, c in xi.coefficients:
        if order == 0:
            out = out + c * x**p
        elif order == 1:
            out = out + c * p * x ** (p - 1)
        else:
            out = out + c * p * (p - 1) * x ** (p - 2)
    return float(out) if out.ndim == 0 else out


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


@dataclass(frozen=True)
class BoundaryFunction:
    """Terminal condition Phi: either log cosh or an even tabulated function.

    Beyond the tabulated range a tabulated Phi continues linearly with its
    stored slopes; log cosh is evaluated in closed form everywhere.
    """

    kind: str = "logcosh"
    table: GridFunction | None = None

    def __post_init__(self):
        if self.kind not in ("logcosh", "tabulated"):
            raise ConfigError("phi.kind", f"unknown kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.table is None:
                raise ConfigError("phi.table", "tabulated boundary needs a table")
            _check_even_convex(self.table)

    @classmethod
    def log_cosh(cls) -> "BoundaryFunction":
        return cls("logcosh")

    @classmethod
    def tabulated(cls, table: GridFunction) -> "BoundaryFunction":
        return cls("tabulated", table)

    @classmethod
    def zero(cls, half_width: float = 1.0, n_points: int = 5) -> "BoundaryFunction":
        from .numerics import Grid

        grid = Grid(half_width, n_points)
        return cls("tabulated", GridFunction(grid, np.zeros(n_points), 0.0, 0.0))

    @property
    def left_slope(self) -> float:
        return -1.0 if self.kind == "logcosh" else self.table.left_slope

    @property
    def right_slope(self) -> float:
        return 1.0 if self.kind == "logcosh" else self.table.right_slope

    def __call__(self, x):
        if self.kind == "logcosh":
            out = _log_cosh(np.asarray(x, dtype=float))
            return float(out) if out.ndim == 0 else out
        return eval_at(self.table, x)

    def derivative(self, x):
        if self.kind == "logcosh":
            out = np.tanh(np.asarray(x, dtype=float))
            return float(out) if out.ndim == 0 else out
        return eval_at(differentiate(self.table), x)


def _check_even_convex(table: GridFunction, tol: float = 1e-8) -> None:
    v = table.values
    scale = max(1.0, float(np.max(np.abs(v))))
    if np.max(np.abs(v - v[::-1])) > tol * scale:
        raise ConfigError("phi.table", "tabulated Phi must be even")
    if not math.isclose(table.left_slope, -table.right_slope, abs_tol=tol):
        raise ConfigError("phi.table", "tail slopes must be opposite")
    if np.min(np.diff(v, 2)) < -tol * scale:
        raise ConfigError("phi.table", "tabulated Phi must be convex")


@dataclass(frozen=True)
class StepOrderParameter:
    """Step function m(q) = m_l on [q_l, q_{l+1}), with k = len(m) - 1."""

    m: tuple[float, ...]
    q: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(float(v) for v in self.m))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))

    @property
    def k(self) -> int:
        return len(self.m) - 1

    @classmethod
    def constant(cls, value: float = 1.0) -> "StepOrderParameter":
        """m(q) = value on (0, 1], encoded as k=1 with q_1 = 0."""
        return cls((0.0, value), (0.0, 0.0, 1.0))

    def check(self, require_top_one: bool = True) -> "StepOrderParameter":
        result = validate_step(self, require_top_one)
        if not result.valid:
            raise InvalidStepError(result.violation)
        return self

    def to_dict(self) -> dict:
        return {"m": list(self.m), "q": list(self.q)}


@dataclass(frozen=True)
class StepValidation:
    valid: bool
    violation: str | None = None

    def __bool__(self):
        return self.valid


def validate_step(step: StepOrderParameter, require_top_one: bool = True, tol: float = 0.0) -> StepValidation:
    """Check the ordering and range constraints; report the first one violated."""
    m, q = step.m, step.q
    if len(m) < 2:
        return StepValidation(False, "m needs at least two entries (k >= 1)")
    if len(q) != len(m) + 1:
        return StepValidation(False, f"q must have k+2 = {len(m) + 1} entries, got {len(q)}")
    if not all(math.isfinite(v) for v in m + q):
        return StepValidation(False, "non-finite entry")
    if m[0] != 0.0:
        return StepValidation(False, f"m_0 must be 0, got {m[0]}")
    for l in range(1, len(m)):
        if m[l] < m[l - 1] - tol:
            return StepValidation(False, f"m not nondecreasing at l={l}: {m[l - 1]} > {m[l]}")
    if require_top_one and m[-1] != 1.0:
        return StepValidation(False, f"m_k must be 1, got {m[-1]}")
    if q[0] != 0.0:
        return StepValidation(False, f"q_0 must be 0, got {q[0]}")
    if q[-1] != 1.0:
        return StepValidation(False, f"q_(k+1) must be 1, got {q[-1]}")
    for l in range(1, len(q)):
        if q[l] < q[l - 1] - tol:
            return StepValidation(False, f"q not nondecreasing at l={l}: {q[l - 1]} > {q[l]}")
    return StepValidation(True)


@dataclass(frozen=True)
class ModelSpec:
    xi: MixtureFunction
    phi: BoundaryFunction = field(default_factory=BoundaryFunction.log_cosh)
    h: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.h):
            raise ConfigError("field.h", "must be finite")


def level_variance(xi: MixtureFunction, step: StepOrderParameter, l: int) -> float:
    """E z_l^2 = xi'(q_{l+1}) - xi'(q_l)."""
    if not 0 <= l <= step.k:
        raise IndexError(f"level {l} outside 0..{step.k}")
    v = xi_eval(xi, step.q[l + 1], 1) - xi_eval(xi, step.q[l], 1)
    if v < 0:
        raise ValueError(f"negative variance {v} at level {l}")
    return float(v)


def level_variances(xi: MixtureFunction, step: StepOrderParameter) -> list[float]:
    return [level_variance(xi, step, l) for l in range(step.k + 1)]


def _antiderivative(xi: MixtureFunction, q: float) -> float:
    # d/dq [q xi'(q) - xi(q)] = q xi''(q)
    return q * xi_eval(xi, q, 1) - xi_eval(xi, q, 0)


def linear_term(xi: MixtureFunction, step: StepOrderParameter) -> float:
    """(1/2) int_0^1 m(q) q xi''(q) dq, exact on each constant piece."""
    total = 0.0
    for l, ml in enumerate(step.m):
        if ml:
            total += ml * (_antiderivative(xi, step.q[l + 1]) - _antiderivative(xi, step.q[l]))
    return 0.5 * total


def linear_term_gradient(xi: MixtureFunction, step: StepOrderParameter) -> tuple[np.ndarray, np.ndarray]:
    """Partials of :func:`linear_term` in m_1..m_k and q_1..q_k."""
    k = step.k
    dm = np.array([0.5 * (_antiderivative(xi, step.q[j + 1]) - _antiderivative(xi, step.q[j])) for j in range(1, k + 1)])
    dq = np.array(
        [0.5 * (step.m[l - 1] - step.m[l]) * step.q[l] * xi_eval(xi, step.q[l], 2) for l in range(1, k + 1)]
    )
    return dm, dq


# ---------------------------------------------------------------------------
# key = value model files


def _floats(key: str, text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(key, f"expected a list of numbers, got {text!r}") from None


def parse_key_values(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ConfigError(key, "duplicate key")
        entries[key] = value
    return entries


def mixture_from_text(kind: str, terms: str) -> MixtureFunction:
    if kind == "sk":
        vals = _floats("xi.terms", terms)
        if len(vals) != 1:
            raise ConfigError("xi.terms", "sk needs a single beta")
        return MixtureFunction.sk(vals[0])
    if kind == "mixture":
        betas = {}
        for item in terms.replace(",", " ").split():
            try:
                p, b = item.split(":")
                betas[int(p)] = float(b)
            except ValueError:
                raise ConfigError("xi.terms", f"expected p:beta pairs, got {item!r}") from None
        if not betas:
            raise ConfigError("xi.terms", "mixture needs at least one p:beta pair")
        return MixtureFunction.mixture(betas)
    raise ConfigError("xi.kind", f"expected 'sk' or 'mixture', got {kind!r}")


def model_from_entries(entries: Mapping[str, str], base_dir: Path | None = None):
    """Build ``(ModelSpec, StepOrderParameter | None)`` from parsed entries."""
    xi = mixture_from_text(entries.get("xi.kind", "sk"), entries.get("xi.terms", "1.0"))
    kind = entries.get("phi.kind", "logcosh")
    if kind == "logcosh":
        phi = BoundaryFunction.log_cosh()
    elif kind == "tabulated":
        if "phi.table" not in entries:
            raise ConfigError("phi.table", "required when phi.kind = tabulated")
        path = Path(entries["phi.table"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError("phi.table", f"file not found: {path}")
        phi = BoundaryFunction.tabulated(load_grid_function(path))
    else:
        raise ConfigError("phi.kind", f"expected 'logcosh' or 'tabulated', got {kind!r}")
    try:
        h = float(entries.get("field.h", "0"))
    except ValueError:
        raise ConfigError("field.h", "expected a number") from None
    model = ModelSpec(xi, phi, h)

    step = None
    if "step.m" in entries or "step.q" in entries:
        if "step.m" not in entries or "step.q" not in entries:
            raise ConfigError("step.m" if "step.m" not in entries else "step.q", "step.m and step.q go together")
        step = StepOrderParameter(_floats("step.m", entries["step.m"]), _floats("step.q", entries["step.q"]))
    return model, step


def load_model_file(path) -> tuple[ModelSpec, StepOrderParameter | None, dict[str, str]]:
    path = Path(path)
    entries = parse_key_values(path.read_text())
    model, step = model_from_entries(entries, path.parent)
    return model, step, entries


def format_model(model: ModelSpec, step: StepOrderParameter | None = None) -> str:
    """Inverse of :func:`load_model_file` for SK/mixture with log cosh."""
    if model.phi.kind != "logcosh":
        raise ValueError("only log cosh boundaries are written inline")
    lines = []
    if model.xi.label.startswith("sk"):
        beta = math.sqrt(2.0 * model.xi.coefficients[0][1])
        lines += ["xi.kind = sk", f"xi.terms = {beta!r}"]
    else:
        terms = ", ".join(f"{p}:{math.sqrt(c)!r}" for p, c in model.xi.coefficients)
        lines += ["xi.kind = mixture", f"xi.terms = {terms}"]
    lines += ["phi.kind = logcosh", f"field.h = {model.h!r}"]
    if step is not None:
        lines += ["step.m = " + ", ".join(repr(v) for v in step.m), "step.q = " + ", ".join(repr(v) for v in step.q)]
    return "\n".join(lines) + "\n"


def as_step(m: Sequence[float], q: Sequence[float]) -> StepOrderParameter:
    return StepOrderParameter(tuple(m), tuple(q))
