"""Equilibria by shooting from the Neumann line, and their Morse indices.

Equilibria of ``u_t = a(x,u,u_x) u_xx + f(x,u,u_x)`` on ``[0, pi]`` with
Neumann boundary conditions are the values ``b`` for which the solution of

    u' = p,   p' = -f(x, u, p) / a(x, u, p),   (u, p)(0) = (b, 0)

ends with ``p(pi) = 0``.  The Morse index of such an equilibrium is read off
the clockwise winding of the tangent vector ``(du/db, dp/db)``; a finite
difference eigenvalue solver provides an independent check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy import linalg

from . import ivp
from .errors import (
    BlowUp,
    DomainError,
    EigenSolveFailure,
    NonHyperbolic,
    NotDissipativeOnProbe,
    ParabolicityViolated,
    StepUnderflow,
    TangencySuspected,
    ValidationError,
    WindowTooSmall,
)
from .expr import Coefficient

log = logging.getLogger(__name__)

PI = math.pi


@dataclass(frozen=True)
class ProblemSpec:
    """Everything needed to analyse one equation.

    ``b_min``/``b_max`` fix the scan window explicitly; when left as ``None``
    the window comes from :func:`dissipativity_window`.
    """

    a: Coefficient
    f: Coefficient
    b_min: float | None = None
    b_max: float | None = None
    scan: int = 2048
    rtol: float = 1e-10
    atol: float = 1e-12
    margin: float = 1e-4
    grid: int = 2001
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if (self.b_min is None) != (self.b_max is None):
            raise ValidationError("b_min and b_max must be given together")
        if self.b_min is not None and not self.b_min < self.b_max:
            raise ValidationError("scan window needs b_min < b_max")
        if self.scan < 8:
            raise ValidationError("scan resolution must be at least 8")
        if self.grid < 11:
            raise ValidationError("profile grid must have at least 11 points")
        for name in ("rtol", "atol", "margin"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    @classmethod
    def from_strings(cls, a: str, f: str, params: Mapping[str, float] | None = None, **options):
        params = dict(params or {})
        return cls(
            a=Coefficient.from_text(a, params),
            f=Coefficient.from_text(f, params),
            params=params,
            **options,
        )

    def with_options(self, **options) -> "ProblemSpec":
        return replace(self, **options)

    def tightened(self, factor: float = 1e-2) -> "ProblemSpec":
        """Same problem with integration tolerances scaled by ``factor``.

        Root refinement and profiles use it: a root is only meaningful to the
        accuracy ``p(pi, b)`` itself is computed with.
        """
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)

    def check_parabolicity(self, u_bound: float = 10.0, p_bound: float = 10.0, n: int = 21):
        """Sample ``a`` on a box and reject non-positive values."""
        xs = np.linspace(0.0, PI, n)
        us = np.linspace(-u_bound, u_bound, 2 * n + 1)
        ps = np.linspace(-p_bound, p_bound, 2 * n + 1)
        X, U, P = np.meshgrid(xs, us, ps, indexing="ij")
        try:
            values = self.a(X, U, P)
        except DomainError as exc:
            raise ValidationError(f"diffusion coefficient a cannot be evaluated: {exc}") from None
        if np.min(values) <= 0:
            k = np.unravel_index(np.argmin(values), values.shape)
            raise ValidationError(
                "parabolicity violated: a(x,u,p) = %.3g <= 0 at (x,u,p) = (%.3g, %.3g, %.3g)"
                % (values[k], X[k], U[k], P[k])
            )
        return float(np.min(values))

    # -- shooting right-hand sides ------------------------------------------------

    def _rhs(self, x, u, p):
        a = self.a.bare(x, u, p)
        if np.any(a <= 0):
            raise ParabolicityViolated(
                f"a <= 0 along the shooting orbit near x={float(np.min(x)):.4g}")
        return a, -self.f.bare(x, u, p) / a

    def shooting_field(self, x, y):
        """``(u, p)' = (p, -f/a)``; also accepts lanes as trailing axis."""
        with np.errstate(all="ignore"):
            _, pp = self._rhs(x, y[0], y[1])
            out = np.array([y[1], pp])
        if np.ndim(x) == 0 and not np.all(np.isfinite(out)):
            raise DomainError("shooting field is not finite")
        return out

    def variational_field(self, x, y):
        """Shooting system together with its linearisation in ``b``.

        ``y = (u, p, u_b, p_b)``; the last two components solve
        ``u_b' = p_b``, ``p_b' = -(b* u_b + c* p_b) / a*``.
        """
        u, p, ub, pb = y[0], y[1], y[2], y[3]
        with np.errstate(all="ignore"):
            a, uxx = self._rhs(x, u, p)
            bs = self.a.bare_partial("u")(x, u, p) * uxx + self.f.bare_partial("u")(x, u, p)
            cs = self.a.bare_partial("p")(x, u, p) * uxx + self.f.bare_partial("p")(x, u, p)
            out = np.array([p + 0.0 * u, uxx + 0.0 * u, pb, -(bs * ub + cs * pb) / a])
        if np.ndim(x) == 0 and not np.all(np.isfinite(out)):
            raise DomainError("variational field is not finite")
        return out


@dataclass(frozen=True)
class ShootingPoint:
    b: float
    u_end: float
    p_end: float
    solution: ivp.OdeSolution = field(repr=False)


@dataclass(frozen=True)
class EquilibriumProfile:
    """One equilibrium, sampled on a uniform grid of ``[0, pi]``.

    ``label`` is the 1-based position in increasing ``b`` order.  The Morse
    data is filled in by :func:`morse_index`; ``residual`` is ``|p(pi)|``.
    """

    b: float
    label: int
    x: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    uxx: np.ndarray = field(repr=False)
    solution: ivp.OdeSolution = field(repr=False)
    residual: float = 0.0
    root_tol: float = 0.0
    slope: float = float("nan")
    morse: int | None = None
    angle_end: float | None = None
    hyperbolic_margin: float | None = None
    oracle_top: tuple = field(default=(), repr=False)

    @property
    def u_end(self) -> float:
        return float(self.u[-1])

    @property
    def amplitude(self) -> float:
        return float(np.max(np.abs(self.u)))

    def at(self, x):
        """Dense ``(u, p)`` at arbitrary ``x``."""
        return self.solution(x)


@dataclass(frozen=True)
class LinearizationCoeffs:
    """Coefficients of ``lambda v = a* v_xx + b* v + c* v_x`` along one equilibrium."""

    a_star: Callable
    b_star: Callable
    c_star: Callable


@dataclass(frozen=True)
class DissipativityReport:
    bound: float
    window: tuple
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


# -- dissipativity ------------------------------------------------------------------

def dissipativity_window(problem: ProblemSpec, n_x: int = 33, n_u: int = 33,
                         max_doublings: int = 20, p_probe: float = 1e3) -> DissipativityReport:
    """Smallest ``B = 2^k`` with ``f(x,u,0) u < 0`` sampled on ``B <= |u| <= 2B``.

    The returned window is ``[-2B, 2B]``.  The remaining growth conditions on
    ``f`` and ``a`` are sampled on the box ``|u| <= 2B``, ``|p| <= 2 p_probe``
    and reported; only the sign condition is enforced.
    """
    xs = np.linspace(0.0, PI, n_x)
    B = 1.0
    for _ in range(max_doublings + 1):
        mags = np.linspace(B, 2 * B, n_u)
        us = np.concatenate([-mags, mags])
        X, U = np.meshgrid(xs, us, indexing="ij")
        try:
            prod = problem.f(X, U, np.zeros_like(U)) * U
        except DomainError:
            prod = np.array([1.0])
        if np.all(prod < 0):
            break
        B *= 2
    else:
        raise NotDissipativeOnProbe(
            f"f(x,u,0)*u < 0 fails on every probe shell up to |u| = {2 * B:g}"
        )
    window = (-2 * B, 2 * B)
    checks = {"sign": {"passed": True, "detail": f"f(x,u,0)*u < 0 on {B:g} <= |u| <= {2 * B:g}"}}
    checks.update(_growth_checks(problem, xs, np.linspace(-2 * B, 2 * B, 2 * n_u + 1), p_probe))
    return DissipativityReport(bound=B, window=window, checks=checks)


def _growth_checks(problem, xs, us, P):
    X, U = np.meshgrid(xs, us, indexing="ij")
    out = {}

    def sample(fn, p):
        try:
            return np.abs(fn(X, U, np.full_like(U, p)))
        except DomainError:
            return None

    f1, f2 = sample(problem.f, P), sample(problem.f, 2 * P)
    if f1 is None or f2 is None:
        out["f_growth"] = {"passed": False, "detail": "f not evaluable on the probe box"}
    else:
        m1, m2 = float(np.max(f1)), float(np.max(f2))
        gamma = 0.0 if m1 <= 1e-300 or m2 <= m1 else math.log2(m2 / m1)
        out["f_growth"] = {"passed": gamma < 2.0 - 1e-3,
                           "detail": f"estimated growth exponent in p: {gamma:.3f} (< 2 required)"}

    def a_rate(p):
        try:
            q = np.abs(problem.a(X, U, np.full_like(U, p)))
            terms = np.zeros_like(q)
            for var, weight in (("x", 1.0 / (1.0 + abs(p))), ("u", 1.0), ("p", 1.0 + abs(p))):
                terms = terms + weight * np.abs(problem.a.partial(var, X, U, np.full_like(U, p)))
            return q, terms
        except Exception:  # DomainError or NonDifferentiable
            return None, None

    a1, q1 = a_rate(P)
    a2, q2 = a_rate(2 * P)
    if a1 is None or a2 is None:
        out["a_derivatives"] = {"passed": False, "detail": "a or its partials not evaluable"}
        out["a_bounds"] = {"passed": False, "detail": "a not evaluable"}
    else:
        qm1, qm2 = float(np.max(q1)), float(np.max(q2))
        out["a_derivatives"] = {
            "passed": qm2 <= 2.0 * qm1 + 1e-12,
            "detail": f"|a_x|/(1+|p|)+|a_u|+|a_p|(1+|p|): {qm1:.3g} at |p|={P:g}, {qm2:.3g} at |p|={2 * P:g}",
        }
        lo = min(float(np.min(a1)), float(np.min(a2)))
        hi1, hi2 = float(np.max(a1)), float(np.max(a2))
        out["a_bounds"] = {
            "passed": lo > 0 and hi2 <= 1.5 * hi1 + 1e-12,
            "detail": f"min a = {lo:.3g}, max a = {max(hi1, hi2):.3g} on the probe box",
        }
    return out


# -- shooting ---------------------------------------------------------------------

def shoot(problem: ProblemSpec, b: float) -> ShootingPoint:
    """Integrate the shooting system from ``(0, b, 0)`` to ``x = pi``."""
    sol = ivp.integrate(problem.shooting_field, [b, 0.0], problem.rtol, problem.atol)
    u_end, p_end = sol.y_end
    return ShootingPoint(b=float(b), u_end=float(u_end), p_end=float(p_end), solution=sol)


def _p_end_batch(problem, bs, derivative=False, tangent_scale=1.0):
    """``p(pi, b)`` for many ``b``; blown-up orbits report ``+-inf`` by direction.

    With ``derivative=True`` also returns ``dp(pi, b)/db`` from the
    variational equation (NaN where the orbit blew up).
    """
    bs = np.asarray(bs, dtype=float)
    zeros = np.zeros_like(bs)
    if derivative:
        # a small initial tangent keeps strongly expanding lanes below the blow-up bound
        y0 = np.vstack([bs, zeros, zeros + tangent_scale, zeros])
        field = problem.variational_field
    else:
        y0 = np.vstack([bs, zeros])
        field = problem.shooting_field
    rtol, atol = problem.rtol, problem.atol
    if derivative and tangent_scale != 1.0:
        # the tangent only steers the search: relative accuracy 1e-5 is plenty
        rtol = np.array([[rtol], [rtol], [1e-5], [1e-5]])
        atol = np.array([[atol], [atol], [1e-5 * tangent_scale], [1e-5 * tangent_scale]])
    res = ivp.integrate_batch(field, y0, rtol, atol)
    if np.any(res.status == ivp.FAILED):
        bad = bs[res.status == ivp.FAILED]
        raise StepUnderflow(f"shooting failed for b = {bad[:5]} (step size collapsed)")
    p = res.y[1].copy()
    blown = res.status == ivp.BLOWN_UP
    direction = np.where(res.y[1] != 0, np.sign(res.y[1]), np.sign(res.y[0]))
    p[blown] = np.inf * direction[blown]
    if not derivative:
        return p
    dp = res.y[3] / tangent_scale
    dp[blown] = np.nan
    return p, dp


ROOT_RTOL = 1e-10


def _root_tol(scale, slope=0.0):
    """Acceptance bound for ``|p(pi, b)|``: relative to the window and to ``dp/db``.

    The slope term matters next to saddle-type constant equilibria, where
    ``p(pi, .)`` is steep and its integration noise scales with the slope.
    """
    return ROOT_RTOL * np.maximum(scale, np.abs(np.nan_to_num(slope)))


def _refine(problem, lo, hi, plo, phi, tol, max_iter=100):
    """Bracketed Newton iteration on sign brackets of ``p(pi, .)``, vectorised.

    Newton steps use the variational derivative and fall back to bisection
    whenever they leave the current bracket.
    """
    lo, hi, plo, phi = (np.array(v, dtype=float) for v in (lo, hi, plo, phi))
    n = lo.size
    roots = np.full(n, np.nan)
    resid = np.full(n, np.nan)
    x = 0.5 * (lo + hi)
    px, dpx = _p_end_batch(problem, x, derivative=True)
    open_ = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        # aim two digits below the acceptance bound so re-shooting stays inside it
        hit = open_ & (np.abs(px) <= 1e-2 * np.maximum(tol, _root_tol(0.0, dpx)))
        roots[hit], resid[hit] = x[hit], np.abs(px[hit])
        open_ &= ~hit
        # shrink brackets around the current iterate
        left = open_ & (np.sign(px) == np.sign(plo))
        right = open_ & ~left
        lo[left], plo[left] = x[left], px[left]
        hi[right], phi[right] = x[right], px[right]
        tiny = open_ & (hi - lo <= 4 * np.spacing(np.maximum(np.abs(lo), np.abs(hi))))
        if np.any(tiny):
            # machine resolution: keep the endpoint with the smaller residual
            k = np.flatnonzero(tiny)
            pl, ph = _p_end_batch(problem, lo[k]), _p_end_batch(problem, hi[k])
            use_lo = np.abs(pl) <= np.abs(ph)
            roots[k] = np.where(use_lo, lo[k], hi[k])
            resid[k] = np.where(use_lo, np.abs(pl), np.abs(ph))
            open_[k] = False
        idx = np.flatnonzero(open_)
        if idx.size == 0:
            break
        with np.errstate(all="ignore"):
            step = x[idx] - px[idx] / dpx[idx]
        inside = np.isfinite(step) & (step > lo[idx]) & (step < hi[idx])
        x[idx] = np.where(inside, step, 0.5 * (lo[idx] + hi[idx]))
        px[idx], dpx[idx] = _p_end_batch(problem, x[idx], derivative=True)
    if np.any(open_):
        k = np.flatnonzero(open_)
        roots[k], resid[k] = x[k], np.abs(px[k])
        log.warning("root refinement stopped at residual %s", resid[k])
    return roots, resid


def _subdivide(problem, b_lo, b_hi, depth, tol_tangent, points=17):
    """Look for hidden sign changes of ``p(pi, .)`` around a shallow minimum."""
    for level in range(depth):
        bs = np.linspace(b_lo, b_hi, points)
        ps = _p_end_batch(problem, bs)
        s = np.sign(ps)
        changes = np.flatnonzero(s[:-1] * s[1:] < 0)
        zeros = np.flatnonzero(ps == 0)
        if changes.size or zeros.size:
            return bs, ps
        k = int(np.argmin(np.abs(ps)))
        step = bs[1] - bs[0]
        b_lo, b_hi = bs[k] - step, bs[k] + step
    if np.min(np.abs(ps)) <= tol_tangent:
        raise TangencySuspected(
            f"p(pi, b) touches zero without crossing near b = {bs[k]:.10g} "
            f"(|p| = {abs(ps[k]):.3g}); equilibrium is likely not hyperbolic"
        )
    return None, None


def _edge_brackets(problem, bs, ps, rounds=20, points=16):
    """Brackets next to the blow-up set seen by the scan.

    Near a blow-up boundary ``p(pi, .)`` tends to infinity with the sign of
    the blow-up direction, so a finite sample of the opposite sign next to a
    blown-up one encloses a root.  Between blow-ups in opposite directions
    there is always a finite orbit; one is located first.  Intervals are
    searched by ``points``-section.
    """
    bs, ps = list(bs), list(ps)
    inf = ~np.isfinite(ps)

    def section(lo, hi):
        t = np.linspace(0.0, 1.0, points + 2)[1:-1]
        return lo[:, None] + (hi - lo)[:, None] * t[None, :]

    # opposite blow-up directions: find a finite orbit in between
    k = [i for i in range(len(bs) - 1) if inf[i] and inf[i + 1] and ps[i] != ps[i + 1]]
    lo = np.array([bs[i] for i in k])
    hi = np.array([bs[i + 1] for i in k])
    plo = np.array([ps[i] for i in k])
    for _ in range(rounds):
        if lo.size == 0:
            break
        grid = section(lo, hi)
        pg = _p_end_batch(problem, grid.ravel()).reshape(grid.shape)
        done = np.any(np.isfinite(pg), axis=1)
        for j in np.flatnonzero(done):
            bs.extend(grid[j])
            ps.extend(pg[j])
        # otherwise keep the sub-interval where the direction flips
        nxt_lo, nxt_hi, nxt_p = [], [], []
        for j in np.flatnonzero(~done):
            row = np.concatenate([[plo[j]], pg[j]])
            flip = int(np.flatnonzero(row[:-1] != row[1:])[0]) if np.any(row[:-1] != row[1:]) else points
            left = lo[j] if flip == 0 else grid[j, flip - 1]
            right = grid[j, flip] if flip < points else hi[j]
            nxt_lo.append(left)
            nxt_hi.append(right)
            nxt_p.append(row[flip])
        lo, hi, plo = np.array(nxt_lo), np.array(nxt_hi), np.array(nxt_p)
    n_scan = len(inf)
    extra = (np.array(bs[n_scan:]), np.array(ps[n_scan:]))
    order = np.argsort(bs, kind="stable")
    bs, ps = np.array(bs)[order], np.array(ps)[order]

    # finite next to blown-up with a sign mismatch: a root lies in between
    inf = ~np.isfinite(ps)
    k = np.flatnonzero(inf[:-1] != inf[1:])
    fin_i = np.where(inf[k], k + 1, k)
    inf_i = np.where(inf[k], k, k + 1)
    want = np.sign(ps[fin_i]) != np.sign(ps[inf_i])
    fin_b, fin_p = bs[fin_i[want]], ps[fin_i[want]]
    edge, direction = bs[inf_i[want]], np.sign(ps[inf_i[want]])
    out = []
    for _ in range(rounds):
        if fin_b.size == 0:
            break
        grid = section(fin_b, edge)  # ordered from the finite end
        pg = _p_end_batch(problem, grid.ravel()).reshape(grid.shape)
        keep = np.ones(fin_b.size, dtype=bool)
        for j in range(fin_b.size):
            row = pg[j]
            hit = np.flatnonzero(np.isfinite(row) & (np.sign(row) == direction[j]))
            if hit.size:
                q = hit[0]
                b0, p0 = (fin_b[j], fin_p[j]) if q == 0 else (grid[j, q - 1], row[q - 1])
                b1, p1 = grid[j, q], row[q]
                if b0 > b1:
                    b0, b1, p0, p1 = b1, b0, p1, p0
                out.append((b0, b1, p0, p1))
                keep[j] = False
                continue
            # advance over the finite run that starts at the finite end
            blown = np.flatnonzero(~np.isfinite(row))
            last = (blown[0] if blown.size else points) - 1
            if last >= 0:
                fin_b[j], fin_p[j] = grid[j, last], row[last]
            if last + 1 < points:
                edge[j] = grid[j, last + 1]
        fin_b, fin_p, edge, direction = fin_b[keep], fin_p[keep], edge[keep], direction[keep]
    if fin_b.size:
        log.warning("no bracket found next to the blow-up boundary near b = %s", fin_b)
    return extra, out


def _hermite_suspects(b, p, dp, points=33):
    """Scan intervals that may hide a pair of roots.

    Between two finite samples of equal sign: the cubic Hermite interpolant
    dips to the other sign.  Between a finite and a blown-up sample of equal
    sign: the tangent line at the finite end crosses zero inside the interval.
    """
    t = np.linspace(0.0, 1.0, points)[None, 1:-1]
    h = np.diff(b)[:, None]
    fin = np.isfinite(p) & np.isfinite(dp)
    p_, dp_ = np.where(fin, p, 0.0), np.where(fin, dp, 0.0)
    p0, p1, d0, d1 = p_[:-1, None], p_[1:, None], dp_[:-1, None], dp_[1:, None]
    H = ((2 * t**3 - 3 * t**2 + 1) * p0 + (t**3 - 2 * t**2 + t) * h * d0
         + (-2 * t**3 + 3 * t**2) * p1 + (t**3 - t**2) * h * d1)
    same = np.sign(p[:-1]) == np.sign(p[1:])
    s = np.sign(p[:-1])
    both = same & fin[:-1] & fin[1:]
    dips = both & np.any(s[:, None] * H < 0, axis=1)
    # one end blown up: extrapolate from the finite end across the interval
    hh = np.diff(b)
    left = same & fin[:-1] & ~np.isfinite(p[1:])
    right = same & fin[1:] & ~np.isfinite(p[:-1])
    with np.errstate(invalid="ignore"):
        reach_l = s * (p_[:-1] + dp_[:-1] * hh) < 0
        reach_r = s * (p_[1:] - dp_[1:] * hh) < 0
    return np.flatnonzero(dips | (left & reach_l) | (right & reach_r))


def _resolve_hidden(problem, bs, ps, dps, depth=6, points=9, budget=4096):
    """Resample intervals where the Hermite interpolant predicts a hidden
    double crossing, recursively, until the sign pattern settles.

    Returns extra ``(b, p)`` samples.
    """
    extra_b, extra_p = [], []
    cand = [(bs[i], bs[i + 1]) for i in _hermite_suspects(bs, ps, dps)]
    used = 0
    for _ in range(depth):
        if not cand:
            break
        if used + len(cand) * points > budget:
            log.warning("hidden-crossing search stopped after %d extra shots", used)
            break
        grids = [np.linspace(lo, hi, points) for lo, hi in cand]
        flat = np.concatenate(grids)
        pf, dpf = _p_end_batch(problem, flat, derivative=True, tangent_scale=1e-6)
        used += flat.size
        nxt = []
        for g, pg, dg in zip(grids, np.split(pf, len(grids)), np.split(dpf, len(grids))):
            extra_b.extend(g[1:-1])
            extra_p.extend(pg[1:-1])
            fin = np.isfinite(pg)
            if np.any(np.sign(pg[fin][:-1]) * np.sign(pg[fin][1:]) < 0):
                continue
            nxt.extend((g[i], g[i + 1]) for i in _hermite_suspects(g, pg, dg))
        cand = nxt
    return np.array(extra_b), np.array(extra_p)


def scan_roots(problem: ProblemSpec, window=None, suspicion: float = 1e-3, depth: int = 6,
               scale: float | None = None, check_ends: bool = True):
    """All ``b`` in the window with ``p(pi, b) = 0``, sorted, with residuals.

    ``scale`` fixes the root tolerance (default: from the window);
    ``check_ends=False`` skips the dissipativity sign test at the window ends,
    for rescans of sub-intervals.
    """
    if window is None:
        window = (problem.b_min, problem.b_max)
    b_min, b_max = window
    if scale is None:
        scale = max(1.0, abs(b_min), abs(b_max))
    tol = _root_tol(scale)
    bs = np.linspace(b_min, b_max, problem.scan)
    ps, dps = _p_end_batch(problem, bs, derivative=True, tangent_scale=1e-6)
    if check_ends and not (ps[0] < 0 and ps[-1] > 0):
        raise WindowTooSmall(
            f"expected p(pi, b_min) < 0 < p(pi, b_max), got {ps[0]:.3g} and {ps[-1]:.3g} "
            f"on [{b_min:g}, {b_max:g}]"
        )

    roots, resid = [], []
    exact = np.abs(ps) <= tol
    roots.extend(bs[exact])
    resid.extend(np.abs(ps[exact]))

    def brackets(b, p):
        # intervals with a blown-up end are handled by _blowup_edges
        fin = np.isfinite(p)
        b, p = b[fin], p[fin]
        s = np.where(np.abs(p) <= tol, 0.0, np.sign(p))
        nz = np.flatnonzero(s != 0)
        pairs = [(nz[i], nz[i + 1]) for i in range(len(nz) - 1) if s[nz[i]] != s[nz[i + 1]]]
        # a single exactly-zero sample between opposite signs is already recorded
        pairs = [(i, j) for i, j in pairs if not np.any(s[i + 1:j] == 0)]
        return [(b[i], b[j], p[i], p[j]) for i, j in pairs]

    eb, ep = _resolve_hidden(problem, bs, ps, dps)
    if eb.size:
        allb = np.concatenate([bs, eb])
        order = np.argsort(allb, kind="stable")
        allb, allp = allb[order], np.concatenate([ps, ep])[order]
        ex = np.abs(ep) <= tol
        roots.extend(eb[ex])
        resid.extend(np.abs(ep[ex]))
    else:
        allb, allp = bs, ps
    (xb, xp), edge = _edge_brackets(problem, allb, allp)
    if xb.size:
        order = np.argsort(np.concatenate([allb, xb]), kind="stable")
        allb = np.concatenate([allb, xb])[order]
        allp = np.concatenate([allp, xp])[order]
        ex = np.isfinite(xp) & (np.abs(xp) <= tol)
        roots.extend(xb[ex])
        resid.extend(np.abs(xp[ex]))
    found = brackets(allb, allp) + edge

    # shallow minima of |p| without a sign change: possible near-tangencies
    ap = np.abs(ps)
    s = np.sign(ps)
    for i in range(1, len(bs) - 1):
        if not np.isfinite(ap[i - 1:i + 2]).all():
            continue
        if s[i - 1] == s[i] == s[i + 1] and ap[i] < ap[i - 1] and ap[i] < ap[i + 1] and ap[i] < suspicion * scale:
            sb, sp = _subdivide(problem, bs[i - 1], bs[i + 1], depth, 1e3 * tol)
            if sb is not None:
                ex = np.abs(sp) <= tol
                roots.extend(sb[ex])
                resid.extend(np.abs(sp[ex]))
                found.extend(brackets(sb, sp))

    if found:
        lo, hi, plo, phi = map(np.array, zip(*found))
        r, res = _refine(problem.tightened(), lo, hi, plo, phi, tol)
        roots.extend(r)
        resid.extend(res)

    order = np.argsort(roots)
    roots = np.asarray(roots, dtype=float)[order]
    resid = np.asarray(resid, dtype=float)[order]
    keep = np.ones(len(roots), dtype=bool)
    for k in range(1, len(roots)):
        if roots[k] - roots[k - 1] <= 1e-9 * scale:
            keep[k] = False
    return roots[keep], resid[keep]


def _profile(problem, b, label, residual):
    tight = problem.tightened()
    sol = ivp.integrate(problem.shooting_field, [b, 0.0], tight.rtol, tight.atol)
    x = np.linspace(0.0, PI, problem.grid)
    u, p = sol(x)
    uxx = -problem.f(x, u, p) / problem.a(x, u, p)
    return EquilibriumProfile(
        b=float(b), label=label, x=x, u=u, p=p, uxx=uxx, solution=sol,
        residual=float(max(residual, abs(sol.y_end[1]))),
    )


def _analyse_root(problem, b, residual, scale):
    """Profile, slope and Morse data of one root (label filled in later)."""
    eq = _profile(problem, b, 0, residual)
    tangent = tangent_solution(problem, eq)
    slope = float(tangent.y_end[3])
    eq = replace(eq, slope=slope, root_tol=float(_root_tol(scale, slope)))
    morse, angle, margin = morse_index(problem, eq, tangent)
    return replace(eq, morse=morse, angle_end=angle, hyperbolic_margin=margin)


def _morse_gaps(eqs, window):
    """Sub-intervals where equilibria must be missing.

    Neighbours in ``b`` order have Morse indices differing by exactly one, and
    the outermost equilibria of a dissipative problem are stable.
    """
    gaps = []
    if not eqs:
        return [tuple(window)]
    if eqs[0].morse != 0:
        gaps.append((window[0], eqs[0].b))
    for e1, e2 in zip(eqs, eqs[1:]):
        if abs(e1.morse - e2.morse) != 1:
            gaps.append((e1.b, e2.b))
    if eqs[-1].morse != 0:
        gaps.append((eqs[-1].b, window[1]))
    return gaps


def find_equilibria(problem: ProblemSpec, window=None, check_oracle: bool = True,
                    oracle_grid: int = 401, rescans: int = 3) -> list[EquilibriumProfile]:
    """All equilibria inside the scan window, sorted by ``b`` and labelled ``1..N``.

    Each equilibrium carries its Morse index.  Where the Morse indices show
    that equilibria were missed (see :func:`_morse_gaps`) the gap is scanned
    again at full resolution, up to ``rescans`` times.  Raises
    :class:`NonHyperbolic` when any equilibrium is too close to degenerate.
    """
    if window is None:
        if problem.b_min is not None:
            window = (problem.b_min, problem.b_max)
        else:
            window = dissipativity_window(problem).window
    scale = max(1.0, abs(window[0]), abs(window[1]))
    roots, resid = scan_roots(problem, window, scale=scale)
    log.info("scan of [%g, %g] found %d equilibria", window[0], window[1], len(roots))
    eqs = [_analyse_root(problem, b, r, scale) for b, r in zip(roots, resid)]
    for _ in range(rescans):
        gaps = _morse_gaps(eqs, window)
        if not gaps:
            break
        known = np.array([e.b for e in eqs])
        new = []
        for lo, hi in gaps:
            log.info("Morse indices inconsistent on [%.10g, %.10g]: rescanning", lo, hi)
            rb, rr = scan_roots(problem, (lo, hi), scale=scale, check_ends=False)
            for b, r in zip(rb, rr):
                if known.size == 0 or np.min(np.abs(known - b)) > 1e-9 * scale:
                    new.append((b, r))
        if not new:
            break
        eqs.extend(_analyse_root(problem, b, r, scale) for b, r in new)
        eqs.sort(key=lambda e: e.b)
    gaps = _morse_gaps(eqs, window)
    if gaps:
        log.warning("Morse indices still inconsistent on %s; equilibria may be missing",
                    [(float(lo), float(hi)) for lo, hi in gaps])
    out = []
    for k, eq in enumerate(eqs, start=1):
        eq = replace(eq, label=k)
        if eq.residual > eq.root_tol:
            log.warning("equilibrium %d: residual %.3g above root tolerance %.3g",
                        k, eq.residual, eq.root_tol)
        if check_oracle:
            top = eigenvalue_oracle(problem, eq, oracle_grid)
            if np.min(np.abs(top)) < problem.margin:
                raise NonHyperbolic(
                    f"equilibrium {k} (b={eq.b:.10g}) has an eigenvalue {top[np.argmin(np.abs(top))]:.3g} "
                    "within the hyperbolicity margin of 0"
                )
            eq = replace(eq, oracle_top=tuple(float(v) for v in top))
        out.append(eq)
    return out


# -- linearisation and Morse index --------------------------------------------------

def linearization(problem: ProblemSpec, eq: EquilibriumProfile) -> LinearizationCoeffs:
    """``a*``, ``b*``, ``c*`` as functions of ``x`` along ``eq``.

    ``u_xx`` is taken from the equation (``-f/a``), not from differentiating
    the profile.
    """
    a, f = problem.a, problem.f

    def state(x):
        u, p = eq.at(x)
        return u, p, -f(x, u, p) / a(x, u, p)

    def a_star(x):
        u, p, _ = state(x)
        return a(x, u, p)

    def b_star(x):
        u, p, uxx = state(x)
        return a.partial("u", x, u, p) * uxx + f.partial("u", x, u, p)

    def c_star(x):
        u, p, uxx = state(x)
        return a.partial("p", x, u, p) * uxx + f.partial("p", x, u, p)

    return LinearizationCoeffs(a_star, b_star, c_star)


def _coefficients(problem, eq, x):
    """``(a*, b*, c*)`` at points ``x`` in one pass."""
    a, f = problem.a, problem.f
    u, p = eq.at(x)
    av = a(x, u, p)
    uxx = -f(x, u, p) / av
    bv = a.partial("u", x, u, p) * uxx + f.partial("u", x, u, p)
    cv = a.partial("p", x, u, p) * uxx + f.partial("p", x, u, p)
    return av, bv, cv


def tangent_solution(problem: ProblemSpec, eq: EquilibriumProfile) -> ivp.OdeSolution:
    """Solve ``(u_b)' = p_b, (p_b)' = -(b* u_b + c* p_b)/a*`` from ``(1, 0)``.

    The coefficients are evaluated along the equilibrium orbit integrated
    alongside, i.e. the variational system from ``(b, 0, 1, 0)``.  The
    returned solution has the tangent in components 2 and 3.
    """
    return ivp.integrate(problem.variational_field, [eq.b, 0.0, 1.0, 0.0], problem.rtol, problem.atol)


def morse_index(problem: ProblemSpec, eq: EquilibriumProfile, tangent=None):
    """``(morse, angle_end, margin)`` from the clockwise tangent angle at ``x = pi``.

    ``morse = floor(angle_end / pi) + 1`` and ``margin`` is the distance of
    ``angle_end`` to the nearest multiple of ``pi``.
    """
    sol = tangent if tangent is not None else tangent_solution(problem, eq)
    # sample at least twice per integration step so fast turning is not aliased
    angle = ivp.unwind_angle(lambda x: sol(x)[2:], samples=max(256, 2 * len(sol.xs))).end
    margin = abs(angle - PI * round(angle / PI))
    if margin < problem.margin:
        raise NonHyperbolic(
            f"equilibrium at b={eq.b:.10g}: tangent angle {angle:.8g} is within "
            f"{problem.margin:g} of a multiple of pi"
        )
    return int(math.floor(angle / PI)) + 1, float(angle), float(margin)


def prufer_angle(problem: ProblemSpec, eq: EquilibriumProfile, lam: float = 0.0) -> float:
    """End value of the Prüfer angle for ``lambda v = a* v'' + b* v + c* v'``.

    Integrates ``mu' = sin^2 mu + ((b* - lam)/a*) cos^2 mu - (c*/a*) sin mu cos mu``
    from ``mu(0) = 0``; at ``lam = 0`` this is the tangent angle.
    """

    def field(x, y):
        av, bv, cv = _coefficients(problem, eq, x)
        s, c = np.sin(y[0]), np.cos(y[0])
        return np.array([s * s + (bv - lam) / av * c * c - cv / av * s * c])

    sol = ivp.integrate(field, [0.0], problem.rtol, problem.atol)
    return float(sol.y_end[0])


# -- finite-difference eigenvalue oracle --------------------------------------------

def neumann_operator(a, b, c, h):
    """Bands of ``a v'' + c v' + b v`` with ghost-node Neumann closure.

    Returns ``(lower, diag, upper)`` for the ``m``-point central difference
    matrix (``lower[i]`` couples row ``i+1`` to column ``i``).
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    diag = -2.0 * a / h**2 + b
    up = a / h**2 + c / (2 * h)
    lo = a / h**2 - c / (2 * h)
    upper = up[:-1].copy()
    lower = lo[1:].copy()
    # ghost nodes v_{-1} = v_1, v_m = v_{m-2}
    upper[0] = 2.0 * a[0] / h**2
    lower[-1] = 2.0 * a[-1] / h**2
    return lower, diag, upper


def tridiagonal_eigen(lower, diag, upper, vectors=False):
    """Eigenvalues (descending) of a tridiagonal matrix with ``lower*upper > 0``.

    Such a matrix is similar to a symmetric one, so the spectrum is real and
    computed with the symmetric tridiagonal solver.  Eigenvectors, if asked
    for, are returned for the original matrix, one per column.
    """
    prod = lower * upper
    if np.any(prod <= 0):
        raise EigenSolveFailure("off-diagonal products must be positive (grid too coarse for c*)")
    off = np.sqrt(prod)
    try:
        if vectors:
            w, v = linalg.eigh_tridiagonal(diag, off)
        else:
            w = linalg.eigh_tridiagonal(diag, off, eigvals_only=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenSolveFailure(str(exc)) from None
    order = np.argsort(w)[::-1]
    w = w[order]
    if not vectors:
        return w
    v = v[:, order]
    # undo the diagonal similarity S = D A D^-1 with d_{i+1}/d_i = sqrt(upper_i/lower_i)
    ratio = np.sqrt(upper / lower)
    d = np.concatenate([[1.0], np.cumprod(ratio)])
    vecs = v / d[:, None]
    vecs /= np.max(np.abs(vecs), axis=0)
    return w, vecs


def eigenvalue_oracle(problem: ProblemSpec, eq: EquilibriumProfile, m: int = 401, top: int = 10):
    """Leading eigenvalues of the ``m``-point discretised linearisation, descending."""
    if m < 201:
        raise ValueError("the eigenvalue oracle needs m >= 201")
    x = np.linspace(0.0, PI, m)
    h = x[1] - x[0]
    av, bv, cv = _coefficients(problem, eq, x)
    w = tridiagonal_eigen(*neumann_operator(av, bv, cv, h))
    return w[:top]
