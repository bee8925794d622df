"""Estimator-style front end tying the stages together."""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import sturm, verify
from .errors import ValidationError, VerificationContradiction
from .shoot import ProblemSpec, dissipativity_window, find_equilibria

log = logging.getLogger(__name__)


def as_problem(problem) -> ProblemSpec:
    """Accept a :class:`ProblemSpec` or a mapping with ``a``, ``f`` and parameters."""
    if isinstance(problem, ProblemSpec):
        return problem
    if isinstance(problem, Mapping):
        data = dict(problem)
        missing = [k for k in ("a", "f") if k not in data]
        if missing:
            raise ValidationError(f"problem is missing {', '.join(missing)}")
        params = dict(data.pop("params", {}))
        reserved = {"b_min", "b_max", "scan", "rtol", "atol", "margin", "grid", "name"}
        options = {k: data.pop(k) for k in list(data) if k in reserved}
        a, f = data.pop("a"), data.pop("f")
        params.update(data)
        return ProblemSpec.from_strings(a, f, params, **options)
    raise TypeError(f"cannot interpret {type(problem).__name__} as a problem")


class SturmAttractor(BaseEstimator):
    """Equilibria, Sturm permutation and connection graph of one equation.

    ``fit`` takes the equation (a :class:`ProblemSpec` or a mapping of its
    fields), not a data matrix.  Afterwards ``predict`` maps initial states
    on ``sim_grid`` nodes to the label of the equilibrium they converge to,
    and ``transform`` gives their zero numbers against every equilibrium.

    Parameters
    ----------
    scan, rtol, atol, grid, margin
        Override the corresponding :class:`ProblemSpec` fields when not None.
    oracle_grid : int
        Nodes of the finite-difference eigenvalue check.
    window : tuple or None
        Explicit ``(b_min, b_max)``; default from the dissipativity probe.
    sim_grid : int
        Nodes of the simulation grid used by ``predict``/``transform``/``verify``.
    t_end : float
        Time horizon of simulations.
    random_state : int
        Seed for random seeding directions.

    Attributes
    ----------
    equilibria_ : list of EquilibriumProfile
    morse_ : list of int
    permutation_ : SturmPermutation
    zero_matrix_ : ZeroMatrix
    graph_ : ConnectionGraph
    crosscheck_ : Crosscheck
    window_ : tuple
    """

    def __init__(self, scan=None, rtol=None, atol=None, grid=None, margin=None,
                 oracle_grid=401, window=None, sim_grid=101, t_end=200.0, random_state=0):
        self.scan = scan
        self.rtol = rtol
        self.atol = atol
        self.grid = grid
        self.margin = margin
        self.oracle_grid = oracle_grid
        self.window = window
        self.sim_grid = sim_grid
        self.t_end = t_end
        self.random_state = random_state

    def _problem(self, problem) -> ProblemSpec:
        problem = as_problem(problem)
        overrides = {k: getattr(self, k) for k in ("scan", "rtol", "atol", "grid", "margin")
                     if getattr(self, k) is not None}
        return problem.with_options(**overrides) if overrides else problem

    def fit_equilibria(self, problem):
        """First stage only: equilibria and Morse indices."""
        self.problem_ = self._problem(problem)
        if self.window is not None:
            self.window_ = tuple(float(v) for v in self.window)
        elif self.problem_.b_min is not None:
            self.window_ = (self.problem_.b_min, self.problem_.b_max)
        else:
            self.window_ = dissipativity_window(self.problem_).window
        self.equilibria_ = find_equilibria(self.problem_, self.window_, oracle_grid=self.oracle_grid)
        self.morse_ = [e.morse for e in self.equilibria_]
        self.discrete_ = None
        return self

    def fit_permutation(self):
        self.permutation_ = sturm.build_permutation(self.equilibria_)
        self.zero_matrix_ = sturm.zero_matrix(self.equilibria_)
        self.crosscheck_ = sturm.permutation_crosscheck(self.permutation_, self.morse_, self.zero_matrix_)
        return self

    def fit_graph(self):
        self.graph_ = sturm.connection_graph(self.equilibria_, self.morse_, self.zero_matrix_)
        return self

    def fit(self, problem, y=None):
        return self.fit_equilibria(problem).fit_permutation().fit_graph()

    # -- simulation ----------------------------------------------------------------

    def discrete_equilibria(self) -> list:
        check_is_fitted(self, "equilibria_")
        if self.discrete_ is None:
            self.discrete_ = [verify.discrete_equilibrium(self.problem_, e, self.sim_grid)
                              for e in self.equilibria_]
        return self.discrete_

    def _states(self, U0):
        check_is_fitted(self, "equilibria_")
        U0 = check_array(U0, dtype=float)
        if U0.shape[1] != self.sim_grid:
            raise ValueError(f"initial states need {self.sim_grid} nodes, got {U0.shape[1]}")
        return U0

    def predict(self, U0) -> np.ndarray:
        """Label of the equilibrium each row converges to; 0 if unclassified."""
        U0 = self._states(U0)
        trajs = verify.evolve_batch(self.problem_, U0, self.t_end, self.discrete_equilibria(),
                                    record=False)
        return np.array([t.label or 0 for t in trajs])

    def transform(self, U0) -> np.ndarray:
        """Nodal zero numbers of ``U0 - u_k`` for every equilibrium ``k``."""
        U0 = self._states(U0)
        E = self.discrete_equilibria()
        return np.array([[verify.nodal_zero_number(u - e) for e in E] for u in U0])

    def verify(self, k: int = 4, eps: float | None = None, strict: bool = True) -> dict:
        """Launch seeds around every unstable equilibrium and compare with the graph.

        Returns ``{"launches": [...], "edges": [...], "contradictions": [...]}``;
        with ``strict`` a contradiction raises :class:`VerificationContradiction`.
        """
        check_is_fitted(self, "graph_")
        closure = self.graph_.closure()
        discrete = self.discrete_equilibria()
        launches, edges, contradictions = [], [], []
        for s, eq in enumerate(self.equilibria_):
            if not eq.morse:
                continue
            launch = verify.launch_unstable(self.problem_, self.equilibria_, s, eps=eps, k=k,
                                            m=self.sim_grid, t_end=self.t_end,
                                            seed=self.random_state + s, discrete=discrete)
            launches.append(launch)
            for target in sorted(launch.targets()):
                if not closure.has_edge(eq.label, target):
                    contradictions.append((eq.label, target))
            for _, t in sorted(self.graph_.graph.out_edges(eq.label)):
                v = verify.confirm_heteroclinic(self.problem_, self.equilibria_, s, t - 1, launch=launch)
                edges.append(v)
        if strict and contradictions:
            raise VerificationContradiction(f"simulated connections outside the graph: {contradictions}")
        self.verification_ = {"launches": launches, "edges": edges, "contradictions": contradictions}
        return self.verification_
