"""Adaptive Runge-Kutta integration on ``[0, pi]`` and angle unwinding.

The integrator is the Dormand-Prince 5(4) pair with a PI step-size controller
and the usual fourth order continuous extension.  Two drivers share the
tableau:

* :func:`integrate` follows a single initial value problem, keeps every
  accepted step and returns an :class:`OdeSolution` with dense output;
* :func:`integrate_batch` advances many independent problems at once, each
  lane with its own step size, and only reports end states.  It is what makes
  scanning thousands of shooting parameters cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BlowUp, PathVanishes, StepUnderflow

X_END = math.pi

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the fifth and embedded fourth order weights
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(x0 + t h) = y0 + h * K^T P [t, t^2, t^3, t^4]
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# PI controller exponents (Hairer-Wanner, order 5)
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5

DEFAULT_MAX_NORM = 1e8


def _error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return np.sqrt(np.mean((err / scale) ** 2, axis=0))


@dataclass(frozen=True)
class OdeSolution:
    """Accepted steps of one integration, with dense evaluation.

    ``xs`` are the step breakpoints, ``ys[k]`` the state at ``xs[k]`` and
    ``q[k]`` the ``(n, 4)`` interpolation coefficients of step ``k``.
    """

    xs: np.ndarray
    ys: np.ndarray
    q: np.ndarray
    rtol: float
    atol: float
    x_end: float = X_END
    n_rejected: int = 0

    @property
    def n(self) -> int:
        return self.ys.shape[1]

    @property
    def reached_end(self) -> bool:
        return bool(self.xs[-1] >= self.x_end)

    @property
    def y_end(self) -> np.ndarray:
        return self.ys[-1].copy()

    def __call__(self, x):
        """State at ``x``; shape ``(n,)`` for scalar ``x``, else ``(n, len(x))``."""
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < self.xs[0] - 1e-12) or np.any(x > self.xs[-1] + 1e-12):
            raise ValueError("dense evaluation outside the integrated interval")
        k = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        h = self.xs[k + 1] - self.xs[k]
        t = (x - self.xs[k]) / h
        powers = np.stack([t, t * t, t ** 3, t ** 4])  # (4, m)
        # q[k]: (m, n, 4) -> contract with powers
        incr = np.einsum("mnj,jm->nm", self.q[k], powers)
        out = self.ys[k].T + h * incr
        return out[:, 0] if scalar else out


def _initial_step(field, x0, y0, f0, rtol, atol, span):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = field(x0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def integrate(
    field: Callable[[float, np.ndarray], np.ndarray],
    y0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    x_end: float = X_END,
    max_norm: float = DEFAULT_MAX_NORM,
    max_steps: int = 200_000,
) -> OdeSolution:
    """Integrate ``y' = field(x, y)`` from ``x = 0`` to ``x_end``.

    Raises
    ------
    BlowUp
        if ``max|y|`` exceeds ``max_norm`` (or turns non-finite) first.
    StepUnderflow
        if the step size collapses below machine resolution of ``x``.
    """
    y = np.array(y0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("initial state must be finite")
    n = y.size
    x = 0.0
    f = np.asarray(field(x, y), dtype=float)
    h = _initial_step(field, x, y, f, rtol, atol, x_end)
    err_prev = 1.0
    xs, ys, qs = [x], [y.copy()], []
    K = np.empty((7, n))
    rejected = 0
    for _ in range(max_steps):
        if x >= x_end:
            break
        h = min(h, x_end - x)
        if h <= 4 * np.spacing(max(abs(x), 1.0)):
            raise StepUnderflow(f"step size underflow at x={x:.6g}")
        K[0] = f
        ok = True
        for s in range(1, 7):
            ys_ = y + h * (_A[s] @ K[:s])
            ks = np.asarray(field(x + _C[s] * h, ys_), dtype=float)
            if not np.all(np.isfinite(ks)):
                ok = False
                break
            K[s] = ks
        if ok:
            y_new = y + h * (_B @ K)
            err = _error_norm(h * (_E @ K), y, y_new, rtol, atol)
            ok = np.all(np.isfinite(y_new)) and np.isfinite(err)
        if not ok:
            if np.max(np.abs(y)) > 1e-3 * max_norm:
                raise BlowUp(f"solution left the bound {max_norm:g} near x={x:.6g}", x)
            h *= _MIN_FACTOR
            rejected += 1
            continue
        if err <= 1.0:
            qs.append(K.T @ _P)
            x = x + h if x + h < x_end else x_end
            y = y_new
            f = K[6].copy()
            xs.append(x)
            ys.append(y.copy())
            if np.max(np.abs(y)) > max_norm:
                raise BlowUp(f"solution left the bound {max_norm:g} at x={x:.6g}", x)
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** -_ALPHA * err_prev ** _BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h *= factor
        else:
            rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err ** -(1 / 5))
    else:
        raise StepUnderflow(f"step budget of {max_steps} exhausted at x={x:.6g}")
    return OdeSolution(
        xs=np.array(xs),
        ys=np.array(ys),
        q=np.array(qs),
        rtol=rtol,
        atol=atol,
        x_end=x_end,
        n_rejected=rejected,
    )


# lane status codes of integrate_batch
OK, BLOWN_UP, FAILED = 0, 1, 2


@dataclass
class BatchResult:
    """End states of a batched integration.

    ``y[:, j]`` is the state of lane ``j`` at ``x_end`` when ``status[j] ==
    OK``, otherwise the last accepted state (reached at ``x[j]``).
    """

    y: np.ndarray
    x: np.ndarray
    status: np.ndarray
    steps: np.ndarray = field(repr=False)


def integrate_batch(
    field: Callable[[np.ndarray, np.ndarray], np.ndarray],
    y0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    x_end: float = X_END,
    max_norm: float = DEFAULT_MAX_NORM,
    max_iterations: int = 100_000,
) -> BatchResult:
    """Integrate many independent systems with per-lane step control.

    ``y0`` has shape ``(n, B)``; ``field(x, Y)`` receives the current abscissae
    of the active lanes (shape ``(b,)``) and their states (shape ``(n, b)``).
    Lanes that blow up or whose step collapses are retired with a status code
    instead of aborting the whole batch.
    """
    Y = np.array(y0, dtype=float)
    if Y.ndim != 2:
        raise ValueError("y0 must have shape (n, lanes)")
    n, B = Y.shape
    X = np.zeros(B)
    status = np.full(B, OK)
    steps = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)
    with np.errstate(all="ignore"):
        F = field(X, Y)
    H = np.full(B, 1e-3 * x_end)
    err_prev = np.ones(B)
    for _ in range(max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x, y = X[idx], Y[:, idx]
        h = np.minimum(H[idx], x_end - x)
        K = [F[:, idx]]
        with np.errstate(all="ignore"):
            for s in range(1, 7):
                incr = _A[s][0] * K[0]
                for j in range(1, s):
                    if _A[s][j] != 0.0:
                        incr = incr + _A[s][j] * K[j]
                K.append(field(x + _C[s] * h, y + h * incr))
            y_new = y + h * sum(_B[j] * K[j] for j in range(6) if _B[j] != 0.0)
            e = sum(_E[j] * K[j] for j in range(7) if _E[j] != 0.0)
            err = _error_norm(h * e, y, y_new, rtol, atol)
        finite = np.isfinite(err) & np.all(np.isfinite(y_new), axis=0)
        accept = finite & (err <= 1.0)

        acc = idx[accept]
        X[acc] = np.where(x + h < x_end, x + h, x_end)[accept]
        Y[:, acc] = y_new[:, accept]
        F[:, acc] = K[6][:, accept]
        steps[acc] += 1
        ea = np.maximum(err[accept], 1e-10)
        factor = np.clip(_SAFETY * ea ** -_ALPHA * err_prev[acc] ** _BETA, _MIN_FACTOR, _MAX_FACTOR)
        H[acc] = h[accept] * factor
        err_prev[acc] = np.maximum(err[accept], 1e-4)

        rej = ~accept
        if np.any(rej):
            with np.errstate(all="ignore"):
                shrink = np.where(finite, np.maximum(_MIN_FACTOR, _SAFETY * err ** -(1 / 5)), _MIN_FACTOR)
            H[idx[rej]] = h[rej] * shrink[rej]

        norms = np.max(np.abs(Y[:, idx]), axis=0)
        blown = (norms > max_norm) | (rej & ~finite & (norms > 1e-3 * max_norm))
        underflow = H[idx] <= 4 * np.spacing(np.maximum(np.abs(X[idx]), 1.0))
        done = X[idx] >= x_end
        if np.any(blown | underflow | done):
            status[idx[blown]] = BLOWN_UP
            status[idx[underflow & ~blown & ~done]] = FAILED
            active[idx[blown | done | underflow]] = False
    else:
        status[active] = FAILED
    return BatchResult(y=Y, x=X, status=status, steps=steps)


@dataclass(frozen=True)
class UnwoundAngle:
    """Continuous clockwise angle of a planar path, sampled on ``xs``."""

    xs: np.ndarray
    nu: np.ndarray
    path: Callable = field(repr=False, compare=False)

    @property
    def end(self) -> float:
        return float(self.nu[-1])

    def __call__(self, x):
        """Angle at ``x``: the raw angle on the branch nearest the sampled curve."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.path(np.atleast_1d(x)), dtype=float)
        raw = np.arctan2(-v[1], v[0])
        guess = np.interp(np.atleast_1d(x), self.xs, self.nu)
        out = raw + 2 * np.pi * np.round((guess - raw) / (2 * np.pi))
        return out.reshape(x.shape) if x.ndim else float(out[0])


def unwind_angle(
    path: Callable[[np.ndarray], np.ndarray],
    x0: float = 0.0,
    x1: float = X_END,
    samples: int = 256,
    max_depth: int = 30,
    vanish_tol: float = 1e-14,
) -> UnwoundAngle:
    """Continuous angle ``nu`` with ``(v1, v2) = rho (cos nu, -sin nu)``.

    ``path(xs)`` returns an array of shape ``(2, len(xs))``.  The angle starts
    on the principal branch at ``x0``; consecutive samples are refined until
    every increment is below ``pi / 2`` so that the branch choice is
    unambiguous.  A full turn between two initial samples cannot be detected,
    so ``samples`` must resolve the fastest rotation of the path.
    """
    xs = np.linspace(x0, x1, samples)
    v = np.asarray(path(xs), dtype=float)
    scale = np.max(np.hypot(v[0], v[1]))
    floor = vanish_tol * max(scale, np.finfo(float).tiny)

    def raw_angle(vv):
        r = np.hypot(vv[0], vv[1])
        if np.any(r <= floor) or not np.all(np.isfinite(r)):
            raise PathVanishes("planar path (nearly) vanishes; its angle is undefined")
        return np.arctan2(-vv[1], vv[0])

    raw = list(raw_angle(v))
    grid = list(xs)
    i = 0
    depth = {}
    while i < len(grid) - 1:
        d = (raw[i + 1] - raw[i] + np.pi) % (2 * np.pi) - np.pi
        if abs(d) >= np.pi / 2:
            level = depth.get(i, 0)
            if level >= max_depth:
                raise PathVanishes("angle increments do not resolve; path too fast or vanishing")
            xm = 0.5 * (grid[i] + grid[i + 1])
            rm = float(raw_angle(np.asarray(path(np.array([xm])), dtype=float))[0])
            grid.insert(i + 1, xm)
            raw.insert(i + 1, rm)
            depth = {k + (1 if k > i else 0): lv for k, lv in depth.items()}
            depth[i] = level + 1
            depth[i + 1] = level + 1
            continue
        i += 1
    raw = np.asarray(raw)
    steps = (np.diff(raw) + np.pi) % (2 * np.pi) - np.pi
    nu = np.concatenate([[raw[0]], raw[0] + np.cumsum(steps)])
    return UnwoundAngle(xs=np.asarray(grid), nu=nu, path=path)
