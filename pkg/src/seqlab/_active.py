"""Per-example active sets of labelings with dual mass, shared by the dual trainers."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .model import SparseVector, delta_feature, n_features


class ActiveSetState:
    """Dual variables ``alpha[i][y]`` and the cached primal ``w = (1/lam) sum alpha * delta_f``.

    Every example starts with all of its mass on the gold labeling, so the
    initial ``w`` is zero.
    """

    def __init__(self, data, lam: float, k: int, d: int, max_active: int = 25):
        if not lam > 0:
            raise InvalidInputError("lambda must be positive")
        if max_active < 2:
            raise InvalidInputError("max_active must be at least 2")
        self.data = list(data)
        self.lam = float(lam)
        self.k = k
        self.d = d
        self.dim = n_features(k, d)
        self.max_active = max_active
        self.w = np.zeros(self.dim)
        self.alpha = [{p.y: 1.0} for p in self.data]
        self._delta = [{p.y: SparseVector.zeros(self.dim)} for p in self.data]

    def delta(self, i: int, y) -> SparseVector:
        cache = self._delta[i]
        f = cache.get(y)
        if f is None:
            f = delta_feature(self.data[i], y, self.k, self.d)
            cache[y] = f
        return f

    def margin(self, i: int, y) -> float:
        """w . delta_f_i(y)."""
        return self.delta(i, y).dot(self.w)

    def move(self, i: int, to, frm, tau: float):
        """Shift ``tau`` units of mass from ``frm`` to ``to`` and update ``w``."""
        a = self.alpha[i]
        a[to] = a.get(to, 0.0) + tau
        a[frm] -= tau
        self.delta(i, to).add_to(self.w, tau / self.lam)
        self.delta(i, frm).add_to(self.w, -tau / self.lam)

    def insert(self, i: int, y, mass: float = 0.0):
        self.delta(i, y)
        self.alpha[i][y] = mass
        if mass:
            self.delta(i, y).add_to(self.w, mass / self.lam)

    def remove(self, i: int, y, transfer_to=None):
        """Drop ``y`` from the active set; its mass goes to ``transfer_to`` or vanishes."""
        mass = self.alpha[i].pop(y)
        f = self._delta[i].pop(y)
        if mass:
            f.add_to(self.w, -mass / self.lam)
            if transfer_to is not None:
                self.alpha[i][transfer_to] += mass
                self.delta(i, transfer_to).add_to(self.w, mass / self.lam)

    def evict_smallest(self, i: int, protect=()):
        """Remove the smallest-mass non-gold member, handing its mass to the gold labeling."""
        gold = self.data[i].y
        cands = [(a, y) for y, a in self.alpha[i].items() if y != gold and y not in protect]
        if cands:
            _, y = min(cands)
            self.remove(i, y, transfer_to=gold)

    def recompute_w(self) -> np.ndarray:
        return dual_to_primal(self)

    def active_size(self) -> int:
        return sum(len(a) for a in self.alpha)


def dual_to_primal(state: ActiveSetState) -> np.ndarray:
    """Recompute ``(1/lam) sum_{i,y} alpha_i(y) delta_f_i(y)`` from scratch."""
    w = np.zeros(state.dim)
    for i, a in enumerate(state.alpha):
        for y, mass in a.items():
            if mass:
                state.delta(i, y).add_to(w, mass / state.lam)
    return w
