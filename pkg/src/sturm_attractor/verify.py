"""Direct simulation of the parabolic equation by the method of lines.

The spatial operator uses central differences on ``m`` uniform nodes with
ghost nodes ``u_{-1} = u_1`` and ``u_m = u_{m-2}`` for the Neumann condition.
Time stepping is forward Euler with ``dt = cfl * dx^2 / max(a)`` recomputed
every step.  Several initial states run together as lanes of one array.

Terminal states are classified against equilibria of the *discrete* system,
obtained by Newton polishing the shooting profiles on the same grid.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import BlowUp, GridMismatch, NoConvergence, ParabolicityViolated
from .shoot import EquilibriumProfile, ProblemSpec, neumann_operator, tridiagonal_eigen

log = logging.getLogger(__name__)

PI = math.pi

CONVERGED, MAX_TIME, BLOWN_UP = "converged", "max-time", "blow-up"


@dataclass(frozen=True)
class GridState:
    """Nodal values on ``m`` uniform nodes of ``[0, pi]`` at time ``t``."""

    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 1 or u.size < 101:
            raise ValueError("a grid state needs at least 101 nodes")
        if not np.all(np.isfinite(u)):
            raise ValueError("grid state values must be finite")
        object.__setattr__(self, "u", u)

    @property
    def m(self) -> int:
        return self.u.size

    @property
    def x(self) -> np.ndarray:
        return grid(self.m)


@dataclass
class Trajectory:
    """Saved snapshots of one run and how it ended.

    ``status`` is one of ``"converged"``, ``"max-time"`` or ``"blow-up"``;
    ``label`` is the equilibrium label reached when converged.
    """

    times: np.ndarray
    states: np.ndarray = field(repr=False)
    status: str
    label: int | None = None
    t_final: float = 0.0

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @property
    def x(self) -> np.ndarray:
        return grid(self.m)

    @property
    def final(self) -> GridState:
        return GridState(self.states[-1], float(self.times[-1]))

    def to_csv(self, path) -> None:
        """Long format ``t,x,u`` with a header row."""
        x = self.x
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            for t, u in zip(self.times, self.states):
                for xi, ui in zip(x, u):
                    w.writerow([repr(float(t)), repr(float(xi)), repr(float(ui))])


def grid(m: int) -> np.ndarray:
    return np.linspace(0.0, PI, m)


# -- method of lines ------------------------------------------------------------------

class _Lines:
    """Discrete right-hand side ``a(x,U,DU) LU + f(x,U,DU)`` for lanes ``(B, m)``."""

    def __init__(self, problem: ProblemSpec, m: int):
        self.problem = problem
        self.m = m
        self.x = grid(m)
        self.dx = self.x[1] - self.x[0]

    def derivatives(self, U):
        dx = self.dx
        L = np.empty_like(U)
        P = np.zeros_like(U)
        L[..., 1:-1] = (U[..., 2:] - 2.0 * U[..., 1:-1] + U[..., :-2]) / dx**2
        L[..., 0] = 2.0 * (U[..., 1] - U[..., 0]) / dx**2
        L[..., -1] = 2.0 * (U[..., -2] - U[..., -1]) / dx**2
        P[..., 1:-1] = (U[..., 2:] - U[..., :-2]) / (2.0 * dx)
        return L, P

    def rate(self, U):
        L, P = self.derivatives(U)
        with np.errstate(all="ignore"):
            A = np.broadcast_to(self.problem.a.bare(self.x, U, P), U.shape)
            F = np.broadcast_to(self.problem.f.bare(self.x, U, P), U.shape)
        return A * L + F, A

    def jacobian(self, u):
        """Bands of the derivative of the discrete right-hand side at ``u``."""
        a, f = self.problem.a, self.problem.f
        L, P = self.derivatives(u)
        x = self.x
        av = a(x, u, P)
        bv = a.partial("u", x, u, P) * L + f.partial("u", x, u, P)
        cv = a.partial("p", x, u, P) * L + f.partial("p", x, u, P)
        av, bv, cv = (np.broadcast_to(v, u.shape) for v in (av, bv, cv))
        return neumann_operator(av, bv, cv, self.dx)


def discrete_equilibrium(problem: ProblemSpec, eq: EquilibriumProfile, m: int,
                         tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Newton-polish the profile ``eq`` into a root of the discrete system on ``m`` nodes."""
    lines = _Lines(problem, m)
    u = np.array(eq.at(lines.x)[0], dtype=float)
    scale = max(1.0, float(np.max(np.abs(u))))
    for _ in range(max_iter):
        r, _ = lines.rate(u)
        lower, diag, upper = lines.jacobian(u)
        ab = np.zeros((3, m))
        ab[0, 1:], ab[1], ab[2, :-1] = upper, diag, lower
        du = linalg.solve_banded((1, 1), ab, -r)
        u = u + du
        if np.max(np.abs(du)) <= tol * scale:
            return u
    raise NoConvergence(f"Newton polishing of equilibrium {eq.label} on {m} nodes did not converge")


def unstable_directions(problem: ProblemSpec, u: np.ndarray, count: int) -> tuple:
    """Top ``count`` eigenpairs of the discrete linearisation at ``u``.

    Returns ``(values, vectors)`` with one sup-normalised vector per column.
    """
    w, v = tridiagonal_eigen(*_Lines(problem, u.size).jacobian(u), vectors=True)
    return w[:count], v[:, :count]


def evolve_batch(
    problem: ProblemSpec,
    U0,
    t_end: float,
    equilibria: Sequence[np.ndarray] | None = None,
    cfl: float = 0.2,
    save_dt: float = 0.05,
    match_tol: float = 1e-5,
    dwell: int = 5,
    record: bool = True,
    max_norm: float = 1e8,
    jump: float = 0.05,
) -> list[Trajectory]:
    """Evolve the rows of ``U0`` to ``t_end`` or until each is classified.

    ``equilibria`` are nodal equilibria of the same grid (see
    :func:`discrete_equilibrium`); a lane converges to label ``k+1`` once it
    stays within ``match_tol`` (sup norm) of ``equilibria[k]`` for ``dwell``
    consecutive snapshots.  Snapshots are taken every ``save_dt`` and also
    whenever some lane moved more than ``jump`` since the last one.
    """
    U = np.array(U0, dtype=float, ndmin=2)
    B, m = U.shape
    if m < 101:
        raise ValueError("simulation grids need at least 101 nodes")
    if not np.all(np.isfinite(U)):
        raise ValueError("initial states must be finite")
    lines = _Lines(problem, m)
    E = None if equilibria is None else np.array(equilibria, dtype=float, ndmin=2)
    if E is not None and E.shape[1] != m:
        raise GridMismatch(f"equilibria on {E.shape[1]} nodes, initial states on {m}")

    active = np.ones(B, dtype=bool)
    status = np.full(B, MAX_TIME, dtype=object)
    label = np.zeros(B, dtype=int)
    streak = np.zeros(B, dtype=int)
    candidate = np.full(B, -1)
    t_final = np.full(B, float(t_end))
    snaps_t = [[0.0] for _ in range(B)]
    snaps_u = [[U[b].copy()] for b in range(B)]
    last_saved = U.copy()
    t, next_save = 0.0, save_dt

    def classify(idx):
        if E is None:
            return
        d = np.max(np.abs(U[idx, None, :] - E[None, :, :]), axis=2)
        k = np.argmin(d, axis=1)
        near = d[np.arange(idx.size), k] < match_tol
        same = near & (k == candidate[idx])
        streak[idx] = np.where(same, streak[idx] + 1, np.where(near, 1, 0))
        candidate[idx] = np.where(near, k, -1)
        done = idx[streak[idx] >= dwell]
        status[done] = CONVERGED
        label[done] = candidate[done] + 1
        t_final[done] = t
        active[done] = False

    while t < t_end and np.any(active):
        idx = np.flatnonzero(active)
        R, A = lines.rate(U[idx])
        if np.min(A) <= 0:
            raise ParabolicityViolated(f"a <= 0 during the simulation at t={t:.6g}")
        dt = min(cfl * lines.dx**2 / float(np.max(A)), t_end - t)
        U[idx] += dt * R
        t += dt
        bad = ~np.all(np.isfinite(U[idx]), axis=1) | (np.max(np.abs(U[idx]), axis=1) > max_norm)
        if np.any(bad):
            status[idx[bad]] = BLOWN_UP
            t_final[idx[bad]] = t
            active[idx[bad]] = False
            idx = idx[~bad]
        moved = idx.size and np.max(np.abs(U[idx] - last_saved[idx])) > jump
        if t >= next_save - 1e-12 * save_dt or moved or t >= t_end:
            if t >= next_save - 1e-12 * save_dt:
                next_save += save_dt * max(1, math.floor((t - next_save) / save_dt) + 1)
            last_saved[idx] = U[idx]
            if record:
                for b in idx:
                    snaps_t[b].append(t)
                    snaps_u[b].append(U[b].copy())
            classify(idx)

    out = []
    for b in range(B):
        if not record:
            snaps_t[b].append(t_final[b])
            snaps_u[b].append(U[b].copy())
        out.append(Trajectory(
            times=np.array(snaps_t[b]),
            states=np.array(snaps_u[b]),
            status=str(status[b]),
            label=int(label[b]) if status[b] == CONVERGED else None,
            t_final=float(t_final[b]),
        ))
    return out


def evolve(problem: ProblemSpec, u0, t_end: float, equilibria=None, strict: bool = True,
           **options) -> Trajectory:
    """Single-trajectory version of :func:`evolve_batch`.

    Raises :class:`BlowUp` on blow-up and, when ``equilibria`` are given and
    ``strict`` is set, :class:`NoConvergence` if ``t_end`` is reached unclassified.
    """
    u0 = u0.u if isinstance(u0, GridState) else u0
    traj = evolve_batch(problem, np.asarray(u0)[None, :], t_end, equilibria, **options)[0]
    if traj.status == BLOWN_UP:
        raise BlowUp(f"simulation blew up at t={traj.t_final:.6g}", traj.t_final)
    if equilibria is not None and strict and traj.status != CONVERGED:
        raise NoConvergence(f"no equilibrium reached by t={t_end:g}")
    return traj


# -- zero numbers in time ---------------------------------------------------------------

def nodal_zero_number(v) -> int:
    """Sign changes of nodal values, skipping exact zeros."""
    s = np.sign(np.asarray(v, dtype=float))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def zero_timeline(traj1: Trajectory, traj2: Trajectory) -> list[tuple]:
    """``(t, z(u1 - u2))`` at every snapshot time the two runs share."""
    if traj1.m != traj2.m:
        raise GridMismatch(f"trajectories on {traj1.m} and {traj2.m} nodes")
    shared, i1, i2 = np.intersect1d(traj1.times, traj2.times, return_indices=True)
    if shared.size == 0:
        raise GridMismatch("trajectories share no snapshot times")
    return [(float(t), nodal_zero_number(traj1.states[a] - traj2.states[b]))
            for t, a, b in zip(shared, i1, i2)]


# -- heteroclinic confirmation ---------------------------------------------------------

CONFIRMED, NOT_OBSERVED = "CONFIRMED", "NOT-OBSERVED"


@dataclass(frozen=True)
class Launch:
    """Where the seeds around one source ended up."""

    source: int
    seeds: tuple
    reached: tuple

    def targets(self) -> set:
        return {r for r in self.reached if r is not None}


@dataclass(frozen=True)
class Verdict:
    source: int
    target: int
    verdict: str
    seeds: tuple = ()

    @property
    def confirmed(self) -> bool:
        return self.verdict == CONFIRMED


def launch_unstable(problem: ProblemSpec, equilibria: Sequence[EquilibriumProfile], source: int,
                    eps: float | None = None, k: int = 4, m: int = 101, t_end: float = 200.0,
                    seed: int = 0, discrete=None, **options) -> Launch:
    """Run seeds ``u_source +- eps * phi_n`` for each unstable direction and ``k`` random
    unit combinations of them; ``source`` is a 0-based index."""
    src = equilibria[source]
    if not src.morse:
        raise ValueError(f"equilibrium {src.label} has Morse index 0 and no unstable directions")
    if discrete is None:
        discrete = [discrete_equilibrium(problem, e, m) for e in equilibria]
    if eps is None:
        eps = 1e-3 * max(src.amplitude, max(e.amplitude for e in equilibria))
    base = discrete[source]
    _, V = unstable_directions(problem, base, src.morse)
    rng = np.random.default_rng(seed)
    seeds, names = [], []
    for n in range(src.morse):
        for sgn in (1, -1):
            seeds.append(base + sgn * eps * V[:, n])
            names.append(f"{'+' if sgn > 0 else '-'}phi_{n}")
    for r in range(k):
        c = rng.standard_normal(src.morse)
        v = V @ c
        seeds.append(base + eps * v / np.max(np.abs(v)))
        names.append(f"random_{r}")
    trajs = evolve_batch(problem, np.array(seeds), t_end, discrete, record=False, **options)
    return Launch(src.label, tuple(names), tuple(t.label for t in trajs))


def confirm_heteroclinic(problem: ProblemSpec, equilibria: Sequence[EquilibriumProfile],
                         source: int, target: int, launch: Launch | None = None,
                         **options) -> Verdict:
    """``CONFIRMED`` if a seed near ``source`` converges to ``target`` (0-based indices).

    ``NOT-OBSERVED`` is inconclusive: the seeding may simply have missed the
    basin.  A precomputed :class:`Launch` for the source can be passed in.
    """
    if launch is None:
        launch = launch_unstable(problem, equilibria, source, **options)
    hits = tuple(n for n, r in zip(launch.seeds, launch.reached) if r == target + 1)
    return Verdict(source + 1, target + 1, CONFIRMED if hits else NOT_OBSERVED, hits)
