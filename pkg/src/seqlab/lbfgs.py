"""Limited-memory BFGS with a backtracking (Armijo) line search."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    degraded: bool  # line search failed; x is the best iterate seen

    @property
    def w(self) -> np.ndarray:
        return self.x


class Lbfgs:
    """Stateful minimizer; each :meth:`step` performs one accepted iteration.

    ``fun(x)`` returns ``(value, gradient)``. Convergence is declared when
    ``max|grad| < tol * max(1, max|x|)``.
    """

    def __init__(self, fun, x0, memory=10, tol=1e-6, c1=1e-4, backtrack=0.5, max_backtracks=60):
        self.fun = fun
        self.memory = memory
        self.tol = tol
        self.c1 = c1
        self.backtrack = backtrack
        self.max_backtracks = max_backtracks
        self.x = np.array(x0, dtype=np.float64)
        self.f, self.g = fun(self.x)
        self.pairs = deque(maxlen=memory)
        self.n_iter = 0
        self.degraded = False
        self.history = [self.f]

    @property
    def converged(self) -> bool:
        scale = max(1.0, float(np.abs(self.x).max(initial=0.0)))
        return float(np.abs(self.g).max(initial=0.0)) < self.tol * scale

    def direction(self) -> np.ndarray:
        """Two-loop recursion: approximate ``-H^{-1} g``."""
        q = self.g.copy()
        coef = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            q -= a * y
            coef.append(a)
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(coef)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q

    def step(self) -> bool:
        """Take one iteration; returns False when the line search fails."""
        d = self.direction()
        slope = self.g @ d
        if not slope < 0:
            self.pairs.clear()
            d = -self.g
            slope = self.g @ d
        if self.pairs:
            t = 1.0
        else:
            t = 1.0 / max(1.0, float(np.linalg.norm(self.g)))
        for _ in range(self.max_backtracks):
            x_new = self.x + t * d
            f_new, g_new = self.fun(x_new)
            if np.isfinite(f_new) and f_new < self.f and f_new <= self.f + self.c1 * t * slope:
                break
            t *= self.backtrack
        else:
            self.degraded = True
            return False
        s = x_new - self.x
        y = g_new - self.g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            self.pairs.append((s, y, 1.0 / sy))
        self.x, self.f, self.g = x_new, f_new, g_new
        self.n_iter += 1
        self.history.append(f_new)
        return True

    def result(self) -> LbfgsResult:
        return LbfgsResult(self.x, self.f, self.g, self.n_iter, self.converged, self.degraded)


def minimize_lbfgs(fun, x0, memory=10, max_iter=500, tol=1e-6, callback=None) -> LbfgsResult:
    opt = Lbfgs(fun, x0, memory=memory, tol=tol)
    while not opt.converged and opt.n_iter < max_iter:
        if not opt.step():
            break
        if callback is not None:
            callback(opt)
    return opt.result()
