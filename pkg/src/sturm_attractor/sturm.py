"""Sturm permutation, zero numbers, adjacency and the connection graph.

Python indices into an equilibrium list are 0-based; the labels ``1..N``
(position in increasing ``b`` order) are used for graph nodes, the permutation
and everything that is written out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import networkx as nx
import numpy as np

from .errors import CrosscheckMismatch, EndpointCollision, MultipleZeroSuspected

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-9
REFINE_THRESHOLD = 1e-6
SEPARATION = 1e-8


@dataclass(frozen=True)
class SturmPermutation:
    """``sigma[k]`` is the label of the ``(k+1)``-th smallest ``u(pi)``."""

    sigma: tuple

    def __post_init__(self):
        if sorted(self.sigma) != list(range(1, len(self.sigma) + 1)):
            raise ValueError(f"{list(self.sigma)} is not a permutation of 1..{len(self.sigma)}")

    @property
    def N(self) -> int:
        return len(self.sigma)

    def inverse(self) -> np.ndarray:
        """``inv[label-1]`` is the 1-based position of ``label`` in ``sigma``."""
        inv = np.empty(self.N, dtype=int)
        inv[np.asarray(self.sigma) - 1] = np.arange(1, self.N + 1)
        return inv

    def as_list(self) -> list:
        return [int(s) for s in self.sigma]


@dataclass(frozen=True)
class ZeroMatrix:
    """Symmetric matrix of zero numbers with ``-1`` on the diagonal."""

    values: np.ndarray
    bound_violations: tuple = ()

    def __getitem__(self, ij):
        return int(self.values[ij])

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def tolist(self) -> list:
        return self.values.astype(int).tolist()


@dataclass
class ConnectionGraph:
    """Directed edges ``source -> target`` between equilibrium labels.

    ``graph`` holds the direct connections only; :meth:`closure` gives the
    transitive closure.  Each edge stores the candidates examined by the
    adjacency check under ``checked``.
    """

    graph: nx.DiGraph = field(repr=False)

    @property
    def edges(self) -> list:
        return sorted(self.graph.edges())

    @property
    def nodes(self) -> list:
        return sorted(self.graph.nodes())

    def closure(self) -> nx.DiGraph:
        return nx.transitive_closure_dag(self.graph)

    def morse(self, label: int) -> int:
        return self.graph.nodes[label]["morse"]

    def to_dot(self, name: str = "attractor") -> str:
        """DOT text with one ``rank=same`` group per Morse index."""
        lines = [f'digraph "{name}" {{', "  rankdir=TB;", "  node [shape=circle];"]
        by_index: dict = {}
        for n in self.nodes:
            by_index.setdefault(self.morse(n), []).append(n)
        for i in sorted(by_index, reverse=True):
            members = " ".join(f'"{n}"' for n in by_index[i])
            lines.append(f"  subgraph morse_{i} {{ rank=same; {members} }}")
        for n in self.nodes:
            lines.append(f'  "{n}" [label="{n}\\ni={self.morse(n)}", morse={self.morse(n)}];')
        for s, t in self.edges:
            lines.append(f'  "{s}" -> "{t}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


# -- permutation ------------------------------------------------------------------

def build_permutation(equilibria: Sequence, separation: float = SEPARATION) -> SturmPermutation:
    """Order the labels ``1..N`` by increasing ``u(pi)``.

    ``equilibria`` must be sorted by ``b``.  Two endpoint values closer than
    ``separation * scale`` raise :class:`EndpointCollision`.
    """
    bs = [e.b for e in equilibria]
    if any(b1 >= b2 for b1, b2 in zip(bs, bs[1:])):
        raise ValueError("equilibria must be sorted by strictly increasing b")
    ends = np.array([e.u_end for e in equilibria])
    order = np.argsort(ends, kind="stable")
    scale = max(1.0, float(np.max(np.abs(ends)))) if len(ends) else 1.0
    gaps = np.diff(ends[order])
    if np.any(gaps <= separation * scale):
        k = int(np.argmin(gaps))
        raise EndpointCollision(
            f"u(pi) of equilibria {order[k] + 1} and {order[k + 1] + 1} agree to {gaps[k]:.3g}"
        )
    sigma = SturmPermutation(tuple(int(k) + 1 for k in order))
    if sigma.N > 1 and (sigma.sigma[0] != 1 or sigma.sigma[-1] != sigma.N):
        log.warning("sigma %s does not fix the extreme labels", sigma.as_list())
    if sigma.N % 2 == 0:
        log.warning("even number of equilibria (%d) found by the scan", sigma.N)
    return sigma


# -- zero numbers -------------------------------------------------------------------

def _sign_changes(d, floor):
    s = np.sign(np.where(np.abs(d) > floor, d, 0.0))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def zero_number(eq_i, eq_j, noise: float = NOISE_FLOOR, refine: float = REFINE_THRESHOLD,
                points: int = 65) -> int:
    """Strict sign changes of ``u_i - u_j`` on ``[0, pi]``.

    Grid intervals where ``|d|`` comes within ``refine * scale`` of zero, or
    where ``d`` turns without changing sign, are resampled from the dense
    output before counting.  A point where ``d`` and
    ``d' = p_i - p_j`` are both that small, or a sign change of ``d'`` while
    ``d`` is that small, raises :class:`MultipleZeroSuspected`.
    """
    if eq_i is eq_j:
        raise ValueError("zero number of an equilibrium with itself")
    if eq_i.x.shape != eq_j.x.shape or not np.array_equal(eq_i.x, eq_j.x):
        raise ValueError("profiles must share a grid")
    x = eq_i.x
    d = eq_i.u - eq_j.u
    scale = max(eq_i.amplitude, eq_j.amplitude, 1e-300)
    floor, near = noise * scale, refine * scale
    close = np.flatnonzero(np.abs(d) < near)
    dp = eq_i.p - eq_j.p
    # a turning point of d inside a cell may hide a pair of zeros
    turning = np.flatnonzero((np.sign(dp[1:]) != np.sign(dp[:-1]))
                             & (np.sign(d[1:]) == np.sign(d[:-1])))
    if close.size == 0 and turning.size == 0:
        return _sign_changes(d, floor)
    # resample every grid interval touching a small value or a turning point
    cells = np.unique(np.clip(np.concatenate([close - 1, close, turning]), 0, len(x) - 2))
    xs = [x]
    for k in cells:
        xs.append(np.linspace(x[k], x[k + 1], points)[1:-1])
    xf = np.sort(np.concatenate(xs))
    ui, pi_ = eq_i.at(xf)
    uj, pj = eq_j.at(xf)
    df, dp = ui - uj, pi_ - pj
    small = np.abs(df) < near
    double = small & (np.abs(dp) < near)
    # a turning point of d between samples with d small is a tangency too
    turn = (np.sign(dp[1:]) != np.sign(dp[:-1])) & small[1:] & small[:-1]
    double[:-1] |= turn
    if np.any(double):
        k = int(np.argmax(double))
        raise MultipleZeroSuspected(
            f"u_{eq_i.label} - u_{eq_j.label} and its derivative both vanish near x={xf[k]:.6g}"
        )
    return _sign_changes(df, floor)


def zero_matrix(equilibria: Sequence) -> ZeroMatrix:
    """All pairwise zero numbers, with a sanity check against the Morse indices."""
    n = len(equilibria)
    Z = -np.ones((n, n), dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            Z[i, j] = Z[j, i] = zero_number(equilibria[i], equilibria[j])
    bad = []
    for i in range(n):
        for j in range(i + 1, n):
            mi, mj = equilibria[i].morse, equilibria[j].morse
            if mi is not None and mj is not None and Z[i, j] >= max(mi, mj) + 1:
                bad.append((i + 1, j + 1))
    if bad:
        log.warning("zero numbers above the Morse bound for pairs %s", bad)
    return ZeroMatrix(Z, tuple(bad))


# -- adjacency and cascades ---------------------------------------------------------

def _between(i, j, bs):
    lo, hi = min(bs[i], bs[j]), max(bs[i], bs[j])
    return [k for k in range(len(bs)) if lo < bs[k] < hi]


def _bvalues(equilibria):
    return [e if isinstance(e, (int, float)) else e.b for e in equilibria]


def adjacent(i: int, j: int, equilibria: Sequence, Z) -> tuple:
    """``(True, None)`` if ``i`` and ``j`` are adjacent, else ``(False, k)``.

    ``k`` is the first blocking equilibrium: one with ``b`` strictly between
    and ``Z[i,k] == Z[i,j] == Z[j,k]``.  ``equilibria`` may also be a plain
    list of ``b`` values.
    """
    if i == j:
        raise ValueError("adjacency of an equilibrium with itself")
    Z = getattr(Z, "values", Z)
    bs = _bvalues(equilibria)
    zij = Z[i][j]
    for k in _between(i, j, bs):
        if Z[i][k] == zij == Z[j][k]:
            return False, k
    return True, None


class _CascadeSearch:
    """Memoised search for cascades between Morse levels."""

    def __init__(self, bs, morse, Z):
        self.bs = list(bs)
        self.morse = list(morse)
        self.Z = np.asarray(getattr(Z, "values", Z))
        self.by_index: dict = {}
        for k, m in enumerate(self.morse):
            self.by_index.setdefault(m, []).append(k)
        self.reach = lru_cache(maxsize=None)(self._reach)

    def permitted(self, lower, upper):
        """Morse permit and zero-number permit for one cascade step."""
        if self.morse[upper] != self.morse[lower] + 1:
            return False
        if self.Z[lower, upper] != self.morse[lower]:
            return False
        for k in _between(lower, upper, self.bs):
            if self.Z[lower, k] == self.Z[upper, k]:
                return False
        return True

    def _reach(self, lower, target):
        if lower == target:
            return True
        if self.morse[lower] >= self.morse[target]:
            return False
        return any(
            self.permitted(lower, nxt) and self._reach_cached(nxt, target)
            for nxt in self.by_index.get(self.morse[lower] + 1, [])
        )

    def _reach_cached(self, lower, target):
        return self.reach(lower, target)


def cascadly_adjacent(i: int, j: int, equilibria: Sequence, morse: Sequence, Z,
                      search: _CascadeSearch | None = None) -> bool:
    """Is there a cascade from the lower equilibrium ``j`` up to ``i``?

    Returns ``False`` unless ``morse[i] > morse[j]``.
    """
    if morse[i] <= morse[j]:
        return False
    if search is None:
        search = _CascadeSearch(_bvalues(equilibria), morse, Z)
    return search.reach(j, i)


def connection_graph(equilibria: Sequence, morse: Sequence, Z) -> ConnectionGraph:
    """Edge ``i -> j`` (labels) whenever ``i, j`` are adjacent and ``morse_i > morse_j``."""
    g = nx.DiGraph()
    bs = _bvalues(equilibria)
    for k, m in enumerate(morse):
        g.add_node(k + 1, morse=int(m), b=float(bs[k]))
    for i in range(len(bs)):
        for j in range(len(bs)):
            if morse[i] <= morse[j]:
                continue
            ok, _ = adjacent(i, j, bs, Z)
            if ok:
                g.add_edge(i + 1, j + 1, checked=[k + 1 for k in _between(i, j, bs)])
    if not nx.is_directed_acyclic_graph(g):
        raise AssertionError("connection graph has a cycle")
    return ConnectionGraph(g)


# -- combinatorics of the permutation ---------------------------------------------------

def morse_from_permutation(sigma: SturmPermutation) -> list:
    """``i_1 = 0``, ``i_{m+1} = i_m + sgn(inv(m+1) - inv(m)) (-1)^(m+1)``."""
    inv = sigma.inverse()
    out = [0]
    for m in range(1, sigma.N):
        step = int(np.sign(inv[m] - inv[m - 1])) * (-1) ** (m + 1)
        out.append(out[-1] + step)
    return out


def zeros_from_permutation(sigma: SturmPermutation, morse: Sequence | None = None) -> np.ndarray:
    """Zero numbers of all pairs from ``sigma`` alone.

    For labels ``j < k``: ``z = i_j + ((-1)^k s(k) - 1)/2 + sum_{j<l<k} (-1)^l s(l)``
    with ``s(l) = sgn(inv(l) - inv(j))``.
    """
    inv = sigma.inverse()
    if morse is None:
        morse = morse_from_permutation(sigma)
    n = sigma.N
    Z = -np.ones((n, n), dtype=int)
    for j in range(1, n + 1):
        for k in range(j + 1, n + 1):
            s = lambda l: int(np.sign(inv[l - 1] - inv[j - 1]))
            total = 2 * morse[j - 1] + (-1) ** k * s(k) - 1
            total += 2 * sum((-1) ** l * s(l) for l in range(j + 1, k))
            Z[j - 1, k - 1] = Z[k - 1, j - 1] = total // 2
    return Z


@dataclass(frozen=True)
class Crosscheck:
    morse: list
    zeros: np.ndarray
    morse_ok: bool
    zeros_ok: bool

    @property
    def ok(self) -> bool:
        return self.morse_ok and self.zeros_ok


def permutation_crosscheck(sigma: SturmPermutation, morse: Sequence | None = None,
                           Z=None, strict: bool = True) -> Crosscheck:
    """Morse indices and zero numbers from ``sigma``, compared against computed ones.

    With ``strict`` a disagreement raises :class:`CrosscheckMismatch`.
    """
    m_sigma = morse_from_permutation(sigma)
    z_sigma = zeros_from_permutation(sigma, m_sigma)
    morse_ok = morse is None or list(morse) == m_sigma
    zeros_ok = Z is None or np.array_equal(np.asarray(getattr(Z, "values", Z)), z_sigma)
    if strict and not (morse_ok and zeros_ok):
        parts = []
        if not morse_ok:
            parts.append(f"morse {list(morse)} vs {m_sigma} from sigma")
        if not zeros_ok:
            parts.append("zero matrix differs from the one implied by sigma")
        raise CrosscheckMismatch("; ".join(parts))
    return Crosscheck(m_sigma, z_sigma, morse_ok, zeros_ok)
