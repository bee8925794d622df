"""Sturm global attractors of scalar quasilinear parabolic equations on ``[0, pi]``.

Equilibria come from shooting, Morse indices from the winding of the shooting
tangent, and the connection graph from zero numbers of equilibrium
differences.  Direct simulation provides an independent check.
"""

from .errors import SturmError
from .estimator import SturmAttractor, as_problem
from .shoot import ProblemSpec, find_equilibria
from .sturm import (
    adjacent,
    build_permutation,
    cascadly_adjacent,
    connection_graph,
    permutation_crosscheck,
    zero_matrix,
    zero_number,
)

__all__ = [
    "ProblemSpec",
    "SturmAttractor",
    "SturmError",
    "adjacent",
    "as_problem",
    "build_permutation",
    "cascadly_adjacent",
    "connection_graph",
    "find_equilibria",
    "permutation_crosscheck",
    "zero_matrix",
    "zero_number",
]
