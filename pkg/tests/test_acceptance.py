"""Acceptance criteria, one test each, every test printing a PASS/FAIL line."""

import itertools
import time

import networkx as nx
import numpy as np
import pytest

from sturm_attractor import cli, sturm, verify
from sturm_attractor.errors import NonHyperbolic
from sturm_attractor.shoot import eigenvalue_oracle, find_equilibria
from sturm_attractor.sturm import SturmPermutation

from conftest import CI_LAMBDAS, CI_SIZES, ci_problem, fitted_ci, random_cubic_suite

CI2_EDGES = {(3, 1), (3, 2), (3, 4), (3, 5), (2, 1), (2, 5), (4, 1), (4, 5)}


@pytest.fixture
def verdict(capsys):
    def record(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return record


def test_criterion_1_equilibrium_counts(verdict):
    rows, ok = [], True
    for lam in CI_LAMBDAS:
        start = time.perf_counter()
        n = len(find_equilibria(ci_problem(lam)))
        elapsed = time.perf_counter() - start
        ok &= n == CI_SIZES[lam] and elapsed < 10.0
        rows.append(f"lambda={lam:g}: N={n} in {elapsed:.1f}s")
    verdict(1, ok, "; ".join(rows))


def test_criterion_2_morse_indices(verdict):
    problems, worst = [], 0.0
    for k, lam in enumerate(CI_LAMBDAS):
        model = fitted_ci(lam)
        eqs, morse = model.equilibria_, model.morse_
        mid = len(eqs) // 2
        if morse[mid] != k + 1 or morse[0] != 0 or morse[-1] != 0:
            problems.append(f"lambda={lam:g}: morse {morse}")
        for e in eqs:
            if e.morse != int(np.sum(np.asarray(e.oracle_top) > 0)):
                problems.append(f"lambda={lam:g}: label {e.label} oracle count differs")
        # every unstable mode and the first stable one, against lambda - n^2 and -2 lambda - n^2
        n2 = np.arange(k + 2) ** 2
        for e, exact in ((eqs[mid], lam - n2), (eqs[0], -2 * lam - n2), (eqs[-1], -2 * lam - n2)):
            err = np.max(np.abs(eigenvalue_oracle(model.problem_, e, 801)[: k + 2] - exact))
            worst = max(worst, err)
    ok = not problems and worst <= 1e-3
    verdict(2, ok, "; ".join(problems) or f"all Morse indices match; oracle error {worst:.1e}")


def test_criterion_3_quasilinear_invariance(verdict):
    base = fitted_ci(2.0)
    rows, ok = [], True
    for a in ("1", "1+x/pi", "1+u^2", "1+p^2/(1+p^2)"):
        m = fitted_ci(2.0, a)
        same = (m.permutation_.as_list() == base.permutation_.as_list()
                and np.array_equal(m.zero_matrix_.values, base.zero_matrix_.values)
                and m.graph_.edges == base.graph_.edges)
        ok &= same
        rows.append(f"a={a}: {'same' if same else 'differs'}")
    verdict(3, ok, "; ".join(rows))


def test_criterion_4_graph_lambda_2(verdict):
    g = fitted_ci(2.0).graph_
    edges = set(g.edges)
    ok = (edges == CI2_EDGES and nx.is_directed_acyclic_graph(g.graph)
          and all(g.morse(s) > g.morse(t) for s, t in edges))
    verdict(4, ok, f"edges {sorted(edges)}")


def wolfrum_counterexamples(model):
    bs = [e.b for e in model.equilibria_]
    morse, Z = model.morse_, model.zero_matrix_
    search = sturm._CascadeSearch(bs, morse, Z)
    bad = []
    for i, j in itertools.permutations(range(len(bs)), 2):
        if morse[i] > morse[j]:
            if sturm.adjacent(i, j, bs, Z)[0] != sturm.cascadly_adjacent(i, j, bs, morse, Z, search):
                bad.append((i + 1, j + 1))
    return bad


def test_criterion_5_wolfrum_equivalence(verdict):
    fits, redraws = random_cubic_suite()
    models = [fitted_ci(lam) for lam in CI_LAMBDAS] + list(fits)
    pairs = sum(1 for m in models for i, j in itertools.permutations(range(len(m.morse_)), 2)
                if m.morse_[i] > m.morse_[j])
    bad = [(n, wolfrum_counterexamples(m)) for n, m in enumerate(models)]
    bad = [b for b in bad if b[1]]
    sizes = sorted({len(m.morse_) for m in fits})
    verdict(5, len(fits) == 25 and not bad,
            f"{len(models)} problems, {pairs} pairs, {len(bad)} with counterexamples; "
            f"random sizes {sizes}, {redraws} degenerate redraws")


def test_criterion_6_dropping_lemma(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(20240917)
    m = 401
    x = verify.grid(m)
    k = np.arange(9)
    coeffs = rng.uniform(-1.5, 1.5, (200, k.size)) / (1 + k) ** 0.5
    U0 = coeffs @ np.cos(np.outer(k, x))
    trajs = verify.evolve_batch(ci_problem(2.0), U0, 1.0, save_dt=0.02)
    violations, drops = 0, 0
    for a, b in zip(trajs[0::2], trajs[1::2]):
        zs = [z for _, z in verify.zero_timeline(a, b)]
        violations += sum(z2 > z1 for z1, z2 in zip(zs, zs[1:]))
        drops += zs[0] - zs[-1]
    elapsed = time.perf_counter() - start
    verdict(6, violations == 0 and elapsed < 300,
            f"100 pairs on m={m}: {violations} violations, {drops} zeros lost in total, {elapsed:.0f}s")


def test_criterion_7_heteroclinic_confirmation(verdict):
    model = fitted_ci(2.0)
    result = model.verify(strict=False)
    closure = model.graph_.closure()
    confirmed = {(v.source, v.target) for v in result["edges"] if v.confirmed}
    required = {e for e in CI2_EDGES if e[0] in (2, 3, 4)}
    launched = {(l.source, t) for l in result["launches"] for t in l.targets()}
    outside = [p for p in confirmed | launched if not closure.has_edge(*p)]
    ok = required <= confirmed and not outside and not result["contradictions"]
    verdict(7, ok, f"confirmed {sorted(confirmed)}; outside closure {outside}")


def test_criterion_8_permutation_crosscheck(verdict):
    model = fitted_ci(2.0)
    sigma = SturmPermutation((1, 4, 3, 2, 5))
    cc = sturm.permutation_crosscheck(sigma, model.morse_, model.zero_matrix_, strict=False)
    ok = (model.permutation_ == sigma and cc.ok and cc.morse == [0, 1, 2, 1, 0]
          and np.array_equal(cc.zeros, model.zero_matrix_.values))
    verdict(8, ok, f"morse {cc.morse}, zero matrix {'matches' if cc.zeros_ok else 'differs'}")


def test_criterion_9_non_hyperbolic_guard(verdict, tmp_path):
    path = tmp_path / "lambda4.toml"
    path.write_text('a = "1"\nf = "lambda*u*(1-u^2)"\nlambda = 4\n')
    code = cli.main(["--problem", str(path), "--out", str(tmp_path)])
    ok = code == NonHyperbolic.exit_code and not (tmp_path / "attractor.dot").exists()
    verdict(9, ok, f"exit code {code}, graph written: {(tmp_path / 'attractor.dot').exists()}")
