import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sturm_attractor.errors import NonHyperbolic, NotDissipativeOnProbe, ParabolicityViolated
from sturm_attractor.shoot import (
    ProblemSpec,
    dissipativity_window,
    eigenvalue_oracle,
    find_equilibria,
    linearization,
    morse_index,
    prufer_angle,
    shoot,
)

from conftest import CI_LAMBDAS, CI_SIZES, ci_problem, fitted_ci, random_cubic_suite

DECAY = ProblemSpec.from_strings("1", "-u")


def test_linear_oracle_cosh_sinh():
    pt = shoot(DECAY, 1.0)
    assert pt.u_end == pytest.approx(math.cosh(math.pi), abs=1e-6)
    assert pt.p_end == pytest.approx(math.sinh(math.pi), abs=1e-6)
    assert pt.u_end == pytest.approx(11.5920, abs=1e-4)
    assert pt.p_end == pytest.approx(11.5487, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.5, 4), st.sampled_from(["1", "1+x/pi", "2+sin(u*p)", "1+u^2"]))
def test_constant_root_shoots_to_itself(c, k, a):
    problem = ProblemSpec.from_strings(a, "k*(c-u)*(1+x)", {"c": c, "k": k})
    pt = shoot(problem, c)
    assert pt.u_end == pytest.approx(c, abs=1e-12)
    assert abs(pt.p_end) <= 1e-12


def test_ci_constant_equilibrium():
    pt = shoot(ci_problem(2.0), 1.0)
    assert (pt.u_end, pt.p_end) == (pytest.approx(1.0), pytest.approx(0.0, abs=1e-14))


def test_shooting_rejects_degenerate_diffusion():
    problem = ProblemSpec.from_strings("1-u", "-u")
    with pytest.raises(ParabolicityViolated):
        shoot(problem, 2.0)


# -- dissipativity window ------------------------------------------------------------

def test_window_linear_decay():
    rep = dissipativity_window(DECAY)
    assert rep.bound == 1 and rep.window == (-2, 2)
    assert rep.passed


def test_window_ci():
    rep = dissipativity_window(ci_problem(2.0))
    assert rep.bound == 2 and rep.window == (-4, 4)
    assert rep.checks["sign"]["passed"]


def test_window_anti_dissipative():
    with pytest.raises(NotDissipativeOnProbe):
        dissipativity_window(ProblemSpec.from_strings("1", "u"))


# -- equilibria ---------------------------------------------------------------------

def test_linear_decay_single_equilibrium():
    eqs = find_equilibria(DECAY)
    assert len(eqs) == 1
    assert abs(eqs[0].b) < 1e-12 and np.max(np.abs(eqs[0].u)) < 1e-12
    assert eqs[0].morse == 0


@pytest.mark.parametrize("lam", CI_LAMBDAS)
def test_ci_count_and_symmetry(lam):
    eqs = fitted_ci(lam).equilibria_
    assert len(eqs) == CI_SIZES[lam]
    b = np.array([e.b for e in eqs])
    np.testing.assert_allclose(b, -b[::-1], atol=1e-9)
    assert b[0] == pytest.approx(-1.0) and b[-1] == pytest.approx(1.0)
    assert abs(b[len(b) // 2]) < 1e-12


def test_ci2_nonconstant_pair():
    b = [e.b for e in fitted_ci(2.0).equilibria_]
    assert 0 < b[3] < 1 and b[1] == pytest.approx(-b[3], abs=1e-10)


def test_ci2_nonconstant_root_stable_under_resolution():
    coarse = find_equilibria(ci_problem(2.0), check_oracle=False)
    fine = find_equilibria(ci_problem(2.0, scan=4096), check_oracle=False)
    np.testing.assert_allclose([e.b for e in coarse], [e.b for e in fine], atol=1e-10)


@pytest.mark.parametrize("lam", CI_LAMBDAS)
def test_profile_invariants(lam):
    model = fitted_ci(lam)
    problem = model.problem_
    eqs = model.equilibria_
    assert [e.label for e in eqs] == list(range(1, len(eqs) + 1))
    assert np.all(np.diff([e.b for e in eqs]) > 1e-8)
    for e in eqs:
        assert e.p[0] == 0.0
        assert abs(shoot(problem.tightened(), e.b).p_end) <= e.root_tol
        assert e.residual <= e.root_tol
        np.testing.assert_allclose(e.uxx, -problem.f(e.x, e.u, e.p) / problem.a(e.x, e.u, e.p))
        assert e.morse == math.floor(e.angle_end / math.pi) + 1
        assert e.hyperbolic_margin > problem.margin


def test_non_hyperbolic_ci4():
    with pytest.raises(NonHyperbolic):
        find_equilibria(ci_problem(4.0))


# -- linearisation, Morse index and oracle -----------------------------------------------

def test_linearization_ci2():
    eqs = fitted_ci(2.0).equilibria_
    problem = ci_problem(2.0)
    xs = np.linspace(0, np.pi, 7)
    lin0 = linearization(problem, eqs[2])
    np.testing.assert_allclose(lin0.a_star(xs), 1.0)
    np.testing.assert_allclose(lin0.b_star(xs), 2.0)
    np.testing.assert_allclose(lin0.c_star(xs), 0.0)
    np.testing.assert_allclose(linearization(problem, eqs[4]).b_star(xs), -4.0)


def test_no_p_dependence_means_no_drift_term():
    problem = ProblemSpec.from_strings("1", "sin(x)*u - u^3")
    for e in find_equilibria(problem):
        np.testing.assert_array_equal(linearization(problem, e).c_star(e.x), 0.0)


def test_morse_ci2():
    model = fitted_ci(2.0)
    assert model.morse_ == [0, 1, 2, 1, 0]
    morse, angle, margin = morse_index(model.problem_, model.equilibria_[2])
    assert morse == 2 and margin > 1e-4
    assert find_equilibria(DECAY)[0].morse == 0


def test_oracle_constant_coefficients():
    eqs = fitted_ci(2.0).equilibria_
    problem = ci_problem(2.0)
    n2 = np.arange(3) ** 2
    np.testing.assert_allclose(eigenvalue_oracle(problem, eqs[2], 401)[:3], 2.0 - n2, atol=1e-3)
    np.testing.assert_allclose(eigenvalue_oracle(problem, eqs[4], 401)[:3], -4.0 - n2, atol=1e-3)
    decay = find_equilibria(DECAY)[0]
    np.testing.assert_allclose(eigenvalue_oracle(DECAY, decay, 401)[:3], [-1, -2, -5], atol=1e-3)


def test_oracle_grid_bound():
    with pytest.raises(ValueError):
        eigenvalue_oracle(DECAY, find_equilibria(DECAY)[0], 101)


@pytest.mark.parametrize("lam", CI_LAMBDAS)
def test_morse_equals_oracle_count(lam):
    for e in fitted_ci(lam).equilibria_:
        assert e.morse == int(np.sum(np.asarray(e.oracle_top) > 0))


@pytest.mark.slow
def test_morse_equals_oracle_count_random_suite():
    fits, _ = random_cubic_suite()
    for model in fits:
        for e in model.equilibria_:
            assert e.morse == int(np.sum(np.asarray(e.oracle_top) > 0))


@pytest.mark.parametrize("lam", [2.0, 5.0])
def test_prufer_angle_decreases_with_spectral_parameter(lam):
    model = fitted_ci(lam)
    problem = model.problem_.with_options(rtol=1e-8, atol=1e-10)
    grid = np.linspace(-30, 15, 19)
    for e in model.equilibria_:
        psi = [prufer_angle(problem, e, s) for s in grid]
        assert np.all(np.diff(psi) <= 1e-9)


@pytest.mark.parametrize("a", ["1+x/pi", "1+u^2", "1+p^2/(1+p^2)", "2+cos(x*u)"])
def test_scaling_by_diffusion_keeps_equilibria(a):
    base = fitted_ci(2.0).equilibria_
    scaled = find_equilibria(ci_problem(2.0, a))
    assert len(scaled) == len(base)
    for e1, e2 in zip(base, scaled):
        assert e2.b == pytest.approx(e1.b, abs=max(e1.root_tol, 1e-9))
        np.testing.assert_allclose(e2.u, e1.u, atol=1e-8)
        assert e2.morse == e1.morse


@pytest.mark.slow
def test_random_suite_equilibria_structure():
    fits, _ = random_cubic_suite()
    for model in fits:
        morse = model.morse_
        assert len(morse) % 2 == 1
        assert morse[0] == morse[-1] == 0
        assert all(abs(m1 - m2) == 1 for m1, m2 in zip(morse, morse[1:]))
