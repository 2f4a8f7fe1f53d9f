"""Unconstrained minimizers: Nelder-Mead simplex and finite-difference BFGS."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidStartError

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]

# reflection, expansion, contraction, shrink
NM_RHO, NM_CHI, NM_GAMMA, NM_SIGMA = 1.0, 2.0, 0.5, 0.5
ARMIJO_C1 = 1e-4
MAX_HALVINGS = 60


@dataclass(frozen=True)
class OptOptions:
    tol: float = 1e-8
    max_iter: int = 500
    init_scale: float = 0.05
    fd_step: float = 1e-6
    # simplex diameter bound; value spread alone stalls on symmetric simplices
    x_tol: float = 1e-8


@dataclass
class OptResult:
    x_min: np.ndarray
    f_min: float
    iterations: int
    converged: bool
    method: str
    nfev: int = 0
    history: list[float] = field(default_factory=list)


class _Counted:
    def __init__(self, f: Objective):
        self.f = f
        self.n = 0

    def __call__(self, x: np.ndarray) -> float:
        self.n += 1
        v = float(self.f(x))
        return v if np.isfinite(v) else np.inf


def _start(f: _Counted, x0) -> tuple[np.ndarray, float]:
    x = np.array(x0, dtype=np.float64).ravel()
    v = float(f.f(x))
    f.n += 1
    if not np.isfinite(v):
        raise InvalidStartError(f"objective is not finite at the start point ({v})")
    return x, v


def nelder_mead(f: Objective, x0, opts: OptOptions | None = None) -> OptResult:
    opts = opts or OptOptions()
    fun = _Counted(f)
    x, fx = _start(fun, x0)
    n = x.size
    simplex = np.empty((n + 1, n))
    values = np.empty(n + 1)
    simplex[0], values[0] = x, fx
    for i in range(n):
        p = x.copy()
        p[i] += opts.init_scale
        simplex[i + 1] = p
        values[i + 1] = fun(p)

    history = []
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        history.append(float(values[0]))
        if values[-1] - values[0] < opts.tol and \
                np.max(np.abs(simplex[1:] - simplex[0])) < opts.x_tol:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + NM_RHO * (centroid - worst)
        fr = fun(xr)
        if fr < values[0]:
            xe = centroid + NM_CHI * (xr - centroid)
            fe = fun(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + NM_GAMMA * (xr - centroid)
            fc = fun(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid - NM_GAMMA * (centroid - worst)
            fc = fun(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            simplex[i] = simplex[0] + NM_SIGMA * (simplex[i] - simplex[0])
            values[i] = fun(simplex[i])

    best = int(np.argmin(values))
    return OptResult(simplex[best].copy(), float(values[best]), it, converged,
                     "NelderMead", fun.n, history)


def fd_gradient(f: Objective, x: np.ndarray, step: float) -> np.ndarray:
    """Central differences with step ``step * max(1, |x_i|)``."""
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def bfgs(f: Objective, x0, opts: OptOptions | None = None) -> OptResult:
    opts = opts or OptOptions()
    fun = _Counted(f)
    x, fx = _start(fun, x0)
    n = x.size
    g = fd_gradient(fun, x, opts.fd_step)
    H = np.eye(n)
    history = []
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        history.append(fx)
        if not np.all(np.isfinite(g)):
            break
        if np.max(np.abs(g)) < opts.tol:
            converged = True
            break
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(n)
            p = -g
            slope = float(g @ p)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            xn = x + t * p
            fn = fun(xn)
            if fn <= fx + ARMIJO_C1 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            log.debug("bfgs line search failed after %d halvings", MAX_HALVINGS)
            break
        gn = fd_gradient(fun, xn, opts.fd_step)
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 1:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        x, fx, g = xn, fn, gn
    else:
        history.append(fx)
    return OptResult(x.copy(), float(fx), it, converged, "BFGS", fun.n, history)


def refine_best(f: Objective, x0, opts: OptOptions | None = None) -> OptResult:
    """Run both minimizers from ``x0`` and keep the lower objective; ties go to BFGS."""
    rb = bfgs(f, x0, opts)
    rn = nelder_mead(f, x0, opts)
    return rn if rn.f_min < rb.f_min else rb
