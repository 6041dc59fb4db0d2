import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parisilab.model import (
    BoundaryFunction,
    ConfigError,
    InvalidStepError,
    MixtureFunction,
    ModelSpec,
    StepOrderParameter,
    format_model,
    level_variance,
    level_variances,
    linear_term,
    linear_term_gradient,
    load_model_file,
    parse_key_values,
    validate_step,
    xi_eval,
)
from parisilab.numerics import Grid, GridFunction, dump_grid_function

from oracles import richardson_derivative

SK1 = MixtureFunction.sk(1.0)
QUARTIC = MixtureFunction.mixture({4: 1.0})


def test_xi_eval_examples():
    assert xi_eval(SK1, 1.0, 1) == 1.0
    assert xi_eval(MixtureFunction.mixture({2: 0.7, 4: 0.8}), 0.0, 0) == 0.0
    assert xi_eval(QUARTIC, 0.5, 2) == pytest.approx(3.0, abs=1e-15)


def test_xi_eval_rejects_order():
    with pytest.raises(ValueError):
        xi_eval(SK1, 0.3, 3)


@given(x=st.floats(0.01, 0.99), seed=st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_xi_derivatives_match_finite_differences(x, seed):
    rng = np.random.default_rng(seed)
    xi = MixtureFunction.mixture({2: rng.uniform(0.1, 2), 4: rng.uniform(0.1, 2), 6: rng.uniform(0.1, 1)})
    d1 = richardson_derivative(lambda t: xi_eval(xi, t), x)
    d2 = richardson_derivative(lambda t: xi_eval(xi, t, 1), x)
    assert d1 == pytest.approx(xi_eval(xi, x, 1), rel=1e-8)
    assert d2 == pytest.approx(xi_eval(xi, x, 2), rel=1e-8)


def test_xi_symmetric_and_convex():
    xi = MixtureFunction.mixture({2: 0.7, 4: 0.8})
    x = np.linspace(-1, 1, 41)
    assert np.allclose(xi_eval(xi, x), xi_eval(xi, -x))
    assert np.all(xi_eval(xi, np.linspace(0, 1, 21), 2) >= 0)


@pytest.mark.parametrize("bad", [{3: 1.0}, {2: 0.0}, {2: -1.0}])
def test_mixture_rejects_bad_terms(bad):
    with pytest.raises(ConfigError):
        MixtureFunction.mixture(bad)


def test_level_variance_examples():
    assert level_variance(SK1, StepOrderParameter((0, 1), (0, 0.5, 1)), 0) == pytest.approx(0.5)
    assert level_variance(SK1, StepOrderParameter((0, 0.5, 1), (0, 0.4, 0.4, 1)), 1) == 0.0
    assert level_variance(QUARTIC, StepOrderParameter((0, 1), (0, 0.5, 1)), 1) == pytest.approx(3.5)


def test_level_variances_telescope():
    xi = MixtureFunction.mixture({2: 0.7, 4: 0.8})
    step = StepOrderParameter((0, 0.2, 0.5, 1), (0, 0.1, 0.35, 0.8, 1))
    assert sum(level_variances(xi, step)) == pytest.approx(xi_eval(xi, 1.0, 1) - xi_eval(xi, 0.0, 1), abs=1e-15)


def test_linear_term_examples():
    assert linear_term(SK1, StepOrderParameter((0, 1), (0, 0, 1))) == pytest.approx(0.25)
    assert linear_term(SK1, StepOrderParameter((0, 0), (0, 0.3, 1))) == 0.0
    assert linear_term(SK1, StepOrderParameter((0, 0.5, 1), (0, 0.4, 0.6, 1))) == pytest.approx(0.185)


def test_linear_term_matches_numerical_integral():
    xi = MixtureFunction.mixture({2: 0.7, 4: 0.8})
    step = StepOrderParameter((0, 0.3, 0.6, 1), (0, 0.2, 0.5, 0.7, 1))
    grid = np.linspace(0, 1, 200001)
    mid = 0.5 * (grid[1:] + grid[:-1])
    mvals = np.array(step.m)[np.searchsorted(step.q, mid, side="right") - 1]
    integral = 0.5 * np.sum(mvals * mid * xi_eval(xi, mid, 2)) * (grid[1] - grid[0])
    assert linear_term(xi, step) == pytest.approx(integral, rel=1e-8)


def test_linear_term_is_linear_in_m():
    rng = np.random.default_rng(3)
    q = (0, 0.2, 0.5, 0.9, 1)
    a = StepOrderParameter(tuple(np.r_[0, np.sort(rng.uniform(size=3))]), q)
    b = StepOrderParameter(tuple(np.r_[0, np.sort(rng.uniform(size=3))]), q)
    s, t = 0.3, 1.7
    comb = StepOrderParameter(tuple(s * np.array(a.m) + t * np.array(b.m)), q)
    assert linear_term(QUARTIC, comb) == pytest.approx(s * linear_term(QUARTIC, a) + t * linear_term(QUARTIC, b))
    dm, _ = linear_term_gradient(QUARTIC, a)
    assert np.all(dm >= 0)


def test_linear_term_gradient_matches_fd():
    xi = MixtureFunction.mixture({2: 0.7, 4: 0.8})
    step = StepOrderParameter((0, 0.3, 0.6, 1), (0, 0.2, 0.5, 0.7, 1))
    dm, dq = linear_term_gradient(xi, step)
    h = 1e-6
    for j in range(1, 4):
        up, dn = list(step.m), list(step.m)
        up[j] += h
        dn[j] -= h
        fd = (linear_term(xi, StepOrderParameter(up, step.q)) - linear_term(xi, StepOrderParameter(dn, step.q))) / (2 * h)
        assert dm[j - 1] == pytest.approx(fd, rel=1e-7)
    for l in range(1, 4):
        up, dn = list(step.q), list(step.q)
        up[l] += h
        dn[l] -= h
        fd = (linear_term(xi, StepOrderParameter(step.m, up)) - linear_term(xi, StepOrderParameter(step.m, dn))) / (2 * h)
        assert dq[l - 1] == pytest.approx(fd, rel=1e-7)


def test_validate_step_examples():
    assert validate_step(StepOrderParameter((0, 0.4, 1), (0, 0.3, 0.6, 1)))
    bad = validate_step(StepOrderParameter((0, 0.7, 0.5), (0, 0.3, 0.6, 1)), require_top_one=False)
    assert not bad and "m" in bad.violation
    top = validate_step(StepOrderParameter((0, 0.4, 0.9), (0, 0.3, 0.6, 1)), require_top_one=True)
    assert not top
    assert validate_step(StepOrderParameter((0, 0.4, 0.9), (0, 0.3, 0.6, 1)), require_top_one=False)


@pytest.mark.parametrize(
    "m, q",
    [
        ((0, 0.5, 1), (0, 0.6, 0.3, 1)),
        ((0.1, 1), (0, 0.5, 1)),
        ((0, 1), (0, 0.5, 0.9)),
        ((0, 1), (0, 0.5)),
        ((0, math.nan), (0, 0.5, 1)),
    ],
)
def test_validate_step_rejects(m, q):
    result = validate_step(StepOrderParameter(m, q), require_top_one=False)
    assert not result.valid and result.violation
    with pytest.raises(InvalidStepError):
        StepOrderParameter(m, q).check(require_top_one=False)


def test_degenerate_levels_are_valid():
    assert validate_step(StepOrderParameter((0, 0.5, 0.5, 1), (0, 0.3, 0.3, 0.7, 1)))


def test_boundary_log_cosh():
    phi = BoundaryFunction.log_cosh()
    x = np.array([-800.0, -3.0, 0.0, 2.5, 800.0])
    assert np.allclose(phi(x), [800 - math.log(2), math.log(math.cosh(3)), 0, math.log(math.cosh(2.5)), 800 - math.log(2)])
    assert phi.left_slope == -1 and phi.right_slope == 1


def test_tabulated_boundary_validation():
    grid = Grid(5.0, 101)
    good = GridFunction.sample(grid, lambda x: np.sqrt(1 + x * x) - 1, -5 / math.sqrt(26), 5 / math.sqrt(26))
    assert BoundaryFunction.tabulated(good)(0.0) == pytest.approx(0.0)
    odd = GridFunction.sample(grid, lambda x: x, 1.0, 1.0)
    with pytest.raises(ConfigError):
        BoundaryFunction.tabulated(odd)
    concave = GridFunction.sample(grid, lambda x: -x * x, 10.0, -10.0)
    with pytest.raises(ConfigError):
        BoundaryFunction.tabulated(concave)


def test_parse_key_values_comments_and_errors():
    entries = parse_key_values("# header\nxi.kind = sk  # trailing\n\nxi.terms=1.5\n")
    assert entries == {"xi.kind": "sk", "xi.terms": "1.5"}
    with pytest.raises(ConfigError):
        parse_key_values("xi.kind sk")
    with pytest.raises(ConfigError) as err:
        parse_key_values("a = 1\na = 2")
    assert err.value.key == "a"


def test_load_model_file_round_trip(tmp_path):
    model = ModelSpec(MixtureFunction.mixture({2: 0.7, 4: 0.8}), h=0.3)
    step = StepOrderParameter((0, 0.4, 1), (0, 0.2, 0.6, 1))
    path = tmp_path / "model.txt"
    path.write_text(format_model(model, step))
    loaded, loaded_step, _ = load_model_file(path)
    assert loaded.h == 0.3 and loaded_step == step
    assert [p for p, _ in loaded.xi.coefficients] == [2, 4]
    assert [c for _, c in loaded.xi.coefficients] == pytest.approx([c for _, c in model.xi.coefficients])

    path.write_text("xi.kind = sk\nxi.terms = 1.2\n")
    sk, none_step, _ = load_model_file(path)
    assert none_step is None and xi_eval(sk.xi, 1.0, 1) == pytest.approx(1.44)


def test_load_model_file_tabulated(tmp_path):
    grid = Grid(6.0, 121)
    table = GridFunction.sample(grid, lambda x: np.log(np.cosh(x)), -math.tanh(6), math.tanh(6))
    dump_grid_function(table, tmp_path / "phi.csv")
    (tmp_path / "m.txt").write_text("xi.kind = sk\nxi.terms = 1\nphi.kind = tabulated\nphi.table = phi.csv\n")
    model, _, _ = load_model_file(tmp_path / "m.txt")
    assert model.phi(1.0) == pytest.approx(math.log(math.cosh(1.0)), abs=1e-6)


@pytest.mark.parametrize(
    "text, key",
    [
        ("xi.kind = pspin\n", "xi.kind"),
        ("xi.kind = mixture\nxi.terms = 3:1\n", "xi.terms"),
        ("xi.kind = mixture\nxi.terms = banana\n", "xi.terms"),
        ("xi.kind = sk\nxi.terms = 1, 2\n", "xi.terms"),
        ("field.h = north\n", "field.h"),
        ("step.m = 0, 1\n", "step.q"),
        ("phi.kind = tabulated\n", "phi.table"),
        ("phi.kind = tabulated\nphi.table = missing.csv\n", "phi.table"),
        ("phi.kind = exp\n", "phi.kind"),
    ],
)
def test_model_file_errors_name_the_key(tmp_path, text, key):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        load_model_file(path)
    assert err.value.key == key
