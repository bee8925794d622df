import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sturm_attractor import verify
from sturm_attractor.errors import BlowUp, GridMismatch, NoConvergence
from sturm_attractor.shoot import ProblemSpec

from conftest import ci_problem

X101 = verify.grid(101)
HEAT = ProblemSpec.from_strings("1", "0")
DECAY = ProblemSpec.from_strings("1", "-u")


@pytest.fixture(scope="module")
def ci2_discrete(ci2):
    return ci2.discrete_equilibria()


def test_grid_state_contract():
    with pytest.raises(ValueError):
        verify.GridState(np.zeros(50))
    with pytest.raises(ValueError):
        verify.GridState(np.full(101, np.nan))
    assert verify.GridState(np.zeros(101)).x[-1] == pytest.approx(np.pi)


def test_linear_decay_rate():
    u0 = 1.0 + 0.4 * np.cos(2 * X101) - 0.2 * np.cos(5 * X101)
    traj = verify.evolve(DECAY, u0, 8.0, save_dt=0.5)
    sup = np.max(np.abs(traj.states), axis=1)
    t = traj.times
    for k in range(len(t)):
        later = np.flatnonzero(np.isclose(t, t[k] + 1.0))
        if t[k] >= 2.0 and later.size:
            assert sup[later[0]] / sup[k] == pytest.approx(np.exp(-1.0), rel=0.05)
    assert np.all(np.diff(t) > 0)


def test_decay_converges_to_zero():
    traj = verify.evolve(DECAY, np.cos(X101) + 0.5, 40.0, equilibria=[np.zeros(101)])
    assert traj.status == verify.CONVERGED and traj.label == 1


def test_equilibria_are_fixed_points(ci2, ci2_discrete):
    for eq, u in zip(ci2.equilibria_, ci2_discrete):
        # the shooting profile and its polished grid version agree to discretisation error
        assert np.max(np.abs(eq.at(X101)[0] - u)) < 1e-3
    # roundoff grows along unstable directions, so those run for a shorter time
    for stable, t_end in ((True, 50.0), (False, 2.0)):
        U = np.array([u for e, u in zip(ci2.equilibria_, ci2_discrete) if (e.morse == 0) == stable])
        for u, traj in zip(U, verify.evolve_batch(ci2.problem_, U, t_end)):
            assert np.max(np.abs(traj.states - u)) <= 1e-6


def test_small_constant_seed_reaches_one(ci2, ci2_discrete):
    traj = verify.evolve(ci2.problem_, np.full(101, 0.01), 200.0, ci2_discrete)
    assert traj.label == 5
    np.testing.assert_allclose(traj.final.u, 1.0, atol=1e-5)


def test_unclassified_run_strict(ci2, ci2_discrete):
    with pytest.raises(NoConvergence):
        verify.evolve(ci2.problem_, np.full(101, 0.01), 0.5, ci2_discrete)


def test_blow_up():
    grow = ProblemSpec.from_strings("1", "u^2")
    with pytest.raises(BlowUp):
        verify.evolve(grow, np.full(101, 2.0), 5.0)


def test_grid_mismatch_with_equilibria():
    with pytest.raises(GridMismatch):
        verify.evolve_batch(DECAY, np.zeros((1, 101)), 1.0, [np.zeros(201)])


def test_csv_export(tmp_path):
    traj = verify.evolve(DECAY, np.ones(101), 0.2, save_dt=0.1)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x", "u"]
    assert len(rows) == 1 + 101 * len(traj.times)


# -- zero numbers in time ----------------------------------------------------------------

def test_nodal_zero_number():
    assert verify.nodal_zero_number(np.cos(5 * X101)) == 5
    assert verify.nodal_zero_number([1.0, 0.0, 1.0]) == 0
    assert verify.nodal_zero_number([1.0, 0.0, -1.0]) == 1


def test_shifted_heat_solutions_never_cross():
    u0 = np.cos(3 * X101) + 0.3 * np.sin(7 * X101)
    t1 = verify.evolve(HEAT, u0, 1.0)
    t2 = verify.evolve(HEAT, u0 + 1.0, 1.0)
    assert all(z == 0 for _, z in verify.zero_timeline(t1, t2))


def test_five_crossings_drop(ci2):
    t1 = verify.evolve(ci2.problem_, 0.5 * np.cos(5 * X101), 3.0)
    t2 = verify.evolve(ci2.problem_, np.zeros(101), 3.0)
    zs = [z for _, z in verify.zero_timeline(t1, t2)]
    assert zs[0] == 5 and zs[-1] <= 5
    assert all(b <= a for a, b in zip(zs, zs[1:]))


def test_zero_timeline_grid_mismatch():
    t1 = verify.evolve(DECAY, np.ones(101), 0.1)
    t2 = verify.evolve(DECAY, np.ones(201), 0.1)
    with pytest.raises(GridMismatch):
        verify.zero_timeline(t1, t2)


def smooth_state(coeffs):
    return sum(c * np.cos(k * X101) for k, c in enumerate(coeffs))


modes = st.lists(st.floats(-1.5, 1.5), min_size=1, max_size=8)


@settings(max_examples=15, deadline=None)
@given(modes, modes)
def test_dropping_lemma(c1, c2):
    problem = ci_problem(2.0)
    trajs = verify.evolve_batch(problem, np.array([smooth_state(c1), smooth_state(c2)]), 1.0)
    zs = [z for _, z in verify.zero_timeline(*trajs)]
    assert all(b <= a for a, b in zip(zs, zs[1:])), zs


# -- heteroclinic confirmation ----------------------------------------------------------------

def test_stable_source_rejected(ci2):
    with pytest.raises(ValueError):
        verify.launch_unstable(ci2.problem_, ci2.equilibria_, 0)


def test_confirm_from_zero(ci2, ci2_discrete):
    launch = verify.launch_unstable(ci2.problem_, ci2.equilibria_, 2, discrete=ci2_discrete)
    to_one = verify.confirm_heteroclinic(ci2.problem_, ci2.equilibria_, 2, 4, launch=launch)
    assert to_one.confirmed and {"+phi_0", "-phi_0"} & set(to_one.seeds)
    to_four = verify.confirm_heteroclinic(ci2.problem_, ci2.equilibria_, 2, 3, launch=launch)
    assert to_four.confirmed and {"+phi_1", "-phi_1"} & set(to_four.seeds)
    closure = ci2.graph_.closure()
    assert all(closure.has_edge(3, t) for t in launch.targets())


@pytest.mark.slow
def test_grid_doubling_keeps_classifications(ci2):
    states = [lambda x: np.full_like(x, 0.01), lambda x: -0.01 + 0 * x,
              lambda x: 0.3 * np.cos(x), lambda x: -0.3 * np.cos(x),
              lambda x: 0.2 * np.cos(2 * x) + 0.05, lambda x: 0.8 * np.cos(3 * x)]
    labels = []
    for m in (101, 201):
        x = verify.grid(m)
        discrete = [verify.discrete_equilibrium(ci2.problem_, e, m) for e in ci2.equilibria_]
        trajs = verify.evolve_batch(ci2.problem_, np.array([s(x) for s in states]), 200.0,
                                    discrete, record=False)
        assert all(t.status == verify.CONVERGED for t in trajs)
        labels.append([t.label for t in trajs])
    assert labels[0] == labels[1]
