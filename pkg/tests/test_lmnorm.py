import math

import numpy as np
import pytest

from parisilab.lmnorm import (
    DEFAULT_M_GRID,
    ScalarModel,
    _radial_rule,
    check_concentration,
    check_interpolation_bound,
    check_log_convexity,
    check_second_derivative_sign,
    check_third_cumulant,
    concentration_bound,
    eta_measure,
    f_of_m,
    f_second_derivative,
    log_mgf,
    sample_eta,
    scan,
    second_differences,
    third_cumulant,
)
from parisilab.model import BoundaryFunction, MixtureFunction, ModelSpec, StepOrderParameter
from parisilab.parisi import parisi_p

from oracles import log_cosh, one_level_f

LC = BoundaryFunction.log_cosh()
ZERO = lambda x: 0.0 * np.asarray(x)  # noqa: E731
SQUARE = lambda x: np.asarray(x) ** 2  # noqa: E731


def test_scalar_model_validation():
    with pytest.raises(ValueError):
        ScalarModel(LC, sigma=0.0)
    with pytest.raises(ValueError):
        ScalarModel(LC, dim=0)
    sm = ScalarModel.from_model(ModelSpec(MixtureFunction.sk(1.5), h=0.2), dim=3)
    assert sm.sigma == pytest.approx(1.5) and sm.h == 0.2 and sm.dim == 3


def test_f_of_m_examples():
    assert f_of_m(ScalarModel(LC), 1.0) == pytest.approx(0.5, abs=1e-12)
    sm = ScalarModel(LC, h=0.5)
    assert f_of_m(sm, 1.0) == pytest.approx(0.5 + math.log(math.cosh(0.5)), abs=1e-12)
    eta, w = eta_measure(sm)
    assert f_of_m(sm, 0.0) == pytest.approx(float(eta @ w), abs=1e-15)
    with pytest.raises(ValueError):
        f_of_m(sm, -0.5)


def test_f_of_m_matches_evaluator():
    for beta, h, m in [(1.0, 0.0, 0.5), (1.3, 0.4, 0.8), (0.7, 1.0, 1.0)]:
        model = ModelSpec(MixtureFunction.sk(beta), h=h)
        via_eval = parisi_p(model, StepOrderParameter((0.0, m), (0.0, 0.0, 1.0)))
        assert f_of_m(ScalarModel.from_model(model), m) == pytest.approx(via_eval, abs=1e-8)


def test_f_of_m_against_oracle():
    for m in (0.3, 1.7, 3.0):
        assert f_of_m(ScalarModel(LC, h=0.3, sigma=1.2), m) == pytest.approx(one_level_f(m, 0.3, 1.2), abs=1e-12)


def test_f_nondecreasing_in_m():
    fs = [f_of_m(ScalarModel(LC, h=0.4, sigma=1.1), m) for m in DEFAULT_M_GRID]
    assert np.all(np.diff(fs) >= 0)


def test_f_second_derivative_examples():
    assert abs(f_second_derivative(ScalarModel(ZERO), 1.0)) < 1e-14
    sm = ScalarModel(LC)
    h = 1e-3
    fd = (one_level_f(1 + h) - 2 * one_level_f(1.0) + one_level_f(1 - h)) / h**2
    assert f_second_derivative(sm, 1.0) == pytest.approx(fd, rel=1e-4)
    with pytest.raises(ValueError):
        f_second_derivative(sm, 0.0)


@pytest.mark.parametrize("h, sigma", [(0.0, 1.0), (0.3, 1.2), (1.0, 0.5), (2.0, 2.0)])
def test_f_second_derivative_matches_fd_and_is_nonnegative(h, sigma):
    sm = ScalarModel(LC, h=h, sigma=sigma)
    rep = check_second_derivative_sign(sm)
    assert rep.passed and rep.worst_slack >= -1e-9
    step = 1e-3
    for m in (0.2, 1.0, 2.5):
        fd = (f_of_m(sm, m + step) - 2 * f_of_m(sm, m) + f_of_m(sm, m - step)) / step**2
        assert f_second_derivative(sm, m) == pytest.approx(fd, rel=1e-4)


def test_third_cumulant_examples():
    assert third_cumulant(ScalarModel(ZERO)) == 0.0
    assert third_cumulant(ScalarModel(SQUARE)) == pytest.approx(8.0, abs=1e-9)
    rep = check_third_cumulant(ScalarModel(LC))
    assert rep.passed and rep.worst_slack > 0


def test_third_cumulant_monte_carlo():
    sm = ScalarModel(LC)
    eta = sample_eta(sm, 10_000_000, np.random.default_rng(7))
    c = eta - eta.mean()
    mc = np.mean(c**3)
    se = np.std(c**3) / math.sqrt(eta.size)
    assert abs(third_cumulant(sm) - mc) < 3 * se


def test_interpolation_bound_examples():
    sm = ScalarModel(LC)
    rep = check_interpolation_bound(sm)
    assert rep.passed and rep.instances == 11
    ends = [r for r in rep.records if r["lambda"] in (0.0, 1.0)]
    assert all(abs(r["log_left"] - r["log_right"]) < 1e-12 for r in ends)
    half = next(r for r in rep.records if r["lambda"] == 0.5)
    assert half["log_right"] - half["log_left"] > 1e-4
    with pytest.raises(ValueError):
        check_interpolation_bound(sm, [1.5])


def test_concentration_bound_branches():
    assert concentration_bound(0.0, 0.7) == 1.0
    a = log_mgf(ScalarModel(LC), 1.0) - f_of_m(ScalarModel(LC), 0.0)
    assert concentration_bound(2 * a, a) == pytest.approx(math.exp(-a))
    assert concentration_bound(2 * a + 1e-12, a) == pytest.approx(math.exp(-a))


def test_concentration_monte_carlo():
    rep = check_concentration(ScalarModel(LC), mc_samples=1_000_000, seed=0)
    assert rep.passed and rep.instances == 3
    for r in rep.records:
        assert r["tail"] <= r["bound"] + 3 * r["stderr"]
    with pytest.raises(ValueError):
        check_concentration(ScalarModel(LC), mc_samples=10)


def test_concentration_is_chunking_independent():
    a = check_concentration(ScalarModel(LC, h=0.2), mc_samples=300_000, seed=3, chunk=1 << 16)
    b = check_concentration(ScalarModel(LC, h=0.2), mc_samples=300_000, seed=3, chunk=1 << 16)
    assert a.slacks == b.slacks


def test_second_differences_uniform_matches_raw():
    f = np.array([1.0, 0.5, 0.7, 2.0])
    assert np.allclose(second_differences([0.1, 0.2, 0.3, 0.4], f), np.diff(f, 2))


def test_log_convexity_examples():
    rep = check_log_convexity(ScalarModel(ZERO))
    assert rep.passed and abs(rep.worst_slack) < 1e-14
    rep = check_log_convexity(ScalarModel(LC, h=0.3, sigma=1.2))
    assert rep.passed and rep.worst_slack >= -1e-8 and rep.instances == 28
    with pytest.raises(ValueError):
        check_log_convexity(ScalarModel(LC), [0.5, 0.4, 0.6])


def test_radial_rule_dimension_one_matches_gaussian():
    # for even Phi, Phi(|h + z|) = Phi(h + z)
    sm_radial = ScalarModel(LC, h=0.7, sigma=1.3, dim=1)
    r, w = _radial_rule(0.7 / 1.3, 1, 64, 16)
    radial = float(w @ np.exp(0.8 * log_cosh(1.3 * r)))
    assert math.log(radial) / 0.8 == pytest.approx(f_of_m(sm_radial, 0.8), abs=1e-10)


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_radial_rule_moments(dim):
    r, w = _radial_rule(0.0, dim, 64, 16)
    assert w @ r**2 == pytest.approx(dim, rel=1e-10)
    r, w = _radial_rule(0.5, dim, 64, 16)
    assert w @ r**2 == pytest.approx(dim + 0.25, rel=1e-10)


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_radial_quadrature_against_monte_carlo(dim):
    sm = ScalarModel(LC, h=0.5, sigma=1.0, dim=dim)
    eta = sample_eta(sm, 2_000_000, np.random.default_rng(dim))
    vals = np.exp(0.5 * eta)
    mc = math.log(vals.mean()) / 0.5
    se = vals.std() / vals.mean() / math.sqrt(eta.size) / 0.5
    assert abs(f_of_m(sm, 0.5) - mc) < 4 * se


def test_multidimensional_log_convexity():
    rep = check_log_convexity(ScalarModel(LC, h=0.5, dim=3))
    assert rep.passed


def test_scan_rows():
    rows = scan(ScalarModel(LC), [0.5, 1.0])
    assert len(rows) == 2 and rows[1][1] == pytest.approx(0.5)
