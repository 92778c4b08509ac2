"""Damped Newton ascent with step halving."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MAX_ITER = 100
GTOL = 1e-6
RTOL = 1e-8
_MAX_HALVINGS = 40
# extra Newton steps allowed after the relative-change test fires, to drive the gradient down
_POLISH_STEPS = 5


@dataclass
class NewtonResult:
    x: np.ndarray
    loglik: float
    grad: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def fd_hessian(grad: Callable, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrised."""
    p = x.size
    H = np.empty((p, p))
    for j in range(p):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        H[:, j] = (grad(xp) - grad(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def ascent_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Newton step for maximisation; eigenvalues of H are forced negative when it is not."""
    evals, evecs = np.linalg.eigh(H)
    mag = np.abs(evals)
    floor = max(float(mag.max()) * 1e-10, 1e-12) if mag.size else 1e-12
    return evecs @ ((evecs.T @ g) / np.maximum(mag, floor))


def newton_ascent(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x0,
    hess: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = MAX_ITER,
    gtol: float = GTOL,
    rtol: float = RTOL,
) -> NewtonResult:
    """Maximise ``f``.

    Converged when the gradient sup-norm drops below ``gtol`` or the relative
    change in ``f`` drops below ``rtol``; in the latter case a few further
    steps are taken while they still improve ``f``. ``trace`` lists ``f`` at
    the start and after every accepted step, so it is non-decreasing.
    """
    x = np.array(x0, dtype=np.float64)
    ll = f(x)
    if not np.isfinite(ll):
        raise FloatingPointError("objective is not finite at the starting point")
    trace = [ll]
    g = grad(x)
    small_change = False
    polish = 0
    it = 0
    while it < max_iter:
        if np.max(np.abs(g), initial=0.0) < gtol:
            return NewtonResult(x, ll, g, it, True, trace)
        H = hess(x) if hess is not None else fd_hessian(grad, x)
        d = ascent_direction(H, g)
        t = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            xn = x + t * d
            lln = f(xn)
            if np.isfinite(lln) and lln >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable improvement along an ascent direction
            return NewtonResult(x, ll, g, it, True, trace)
        it += 1
        rel = abs(lln - ll) / max(abs(ll), 1e-300)
        x, ll = xn, lln
        trace.append(ll)
        g = grad(x)
        if rel < rtol:
            small_change = True
        if small_change:
            polish += 1
            if polish > _POLISH_STEPS:
                break
    converged = small_change or np.max(np.abs(g), initial=0.0) < gtol
    return NewtonResult(x, ll, g, it, converged, trace)
