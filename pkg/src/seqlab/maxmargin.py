"""Hinge-loss trainers: the sequential dual method and the 1-slack cutting-plane method.

Both target the margin-rescaled structural SVM with Hamming loss

    P(w) = lam/2 ||w||^2 + sum_i max_y [l_i(y) - w . delta_f_i(y)]

whose dual over per-example simplices is

    D(alpha) = 1/(2 lam) ||sum alpha delta_f||^2 - sum alpha l,   min P = -min D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._active import ActiveSetState, dual_to_primal
from .errors import InvalidInputError
from .inference import loss_augmented_viterbi
from .model import SparseVector, delta_feature, hamming_loss, n_features, score


class SvmDualState(ActiveSetState):
    """Active sets ``A_i`` on the simplex; the gold labeling is always a member."""

    def gradients(self, i: int) -> dict:
        """``g(y) = w . delta_f_i(y) - l_i(y)`` over the active set."""
        gold = self.data[i].y
        return {y: self.margin(i, y) - hamming_loss(gold, y) for y in self.alpha[i]}

    def dual_objective(self) -> float:
        lin = sum(a * hamming_loss(self.data[i].y, y)
                  for i, al in enumerate(self.alpha) for y, a in al.items())
        return 0.5 * self.lam * float(self.w @ self.w) - lin

    def primal_objective(self) -> float:
        return svm_primal_objective(self.w, self.data, self.lam, self.k)

    def duality_gap(self) -> float:
        return self.primal_objective() + self.dual_objective()


def structured_hinge(w, pair, k: int) -> float:
    """``max(0, max_y l(y) - w . delta_f(y))`` via loss-augmented decoding."""
    _, value = loss_augmented_viterbi(w, pair, k)
    return max(0.0, value - score(w, pair.x, pair.y, k))


def svm_primal_objective(w, data, lam: float, k: int) -> float:
    return 0.5 * lam * float(w @ w) + float(np.sum([structured_hinge(w, p, k) for p in data]))


def svm_sdm_example_update(state: SvmDualState, i: int, inner_steps: int = 5, tol: float = 1e-9) -> float:
    """Add the most violating labeling of example ``i`` and run SMO pair steps.

    Returns the KKT violation ``max_{alpha>0} g - min_y g`` measured before
    the update.
    """
    pair = state.data[i]
    gold = pair.y
    act = state.alpha[i]
    y_hat, _ = loss_augmented_viterbi(state.w, pair, state.k)
    g = state.gradients(i)
    g_hat = g[y_hat] if y_hat in g else state.margin(i, y_hat) - hamming_loss(gold, y_hat)
    violation = max(v for y, v in g.items() if act[y] > 0) - g_hat
    if y_hat not in act and g_hat < min(g.values()) - tol:
        state.insert(i, y_hat, 0.0)
        if len(act) > state.max_active:
            state.evict_smallest(i, protect=(y_hat,))

    for _ in range(inner_steps):
        g = state.gradients(i)
        p = min(g, key=g.get)
        q = max((y for y in g if act[y] > 0), key=g.get)
        gap = g[q] - g[p]
        if gap <= tol:
            break
        nrm = (state.delta(i, p) - state.delta(i, q)).norm_sq()
        # Identical feature differences make the restriction linear: move everything.
        tau = act[q] if nrm == 0 else min(state.lam * gap / nrm, act[q])
        state.move(i, p, q, tau)
        if act[q] <= 0.0:
            act[q] = 0.0

    for y in [y for y, a in act.items() if a <= 0.0 and y != gold]:
        state.remove(i, y)
    return violation


def svm_sdm_epoch(state: SvmDualState, order=None, inner_steps: int = 5, tol: float = 1e-9) -> float:
    worst = 0.0
    for i in (range(len(state.data)) if order is None else order):
        worst = max(worst, svm_sdm_example_update(state, i, inner_steps, tol))
    return worst


def svm_sdm_train(data, lam, k, d, max_passes=100, tol=1e-9, max_active=25, inner_steps=5,
                  seed=0, callback=None) -> SvmDualState:
    state = SvmDualState(data, lam, k, d, max_active=max_active)
    rng = np.random.default_rng(seed)
    for _ in range(max_passes):
        worst = svm_sdm_epoch(state, rng.permutation(len(data)), inner_steps, tol)
        if callback is not None:
            callback(state)
        if worst <= tol:
            break
    return state


# ---------------------------------------------------------------------------
# 1-slack cutting plane


@dataclass
class CuttingPlaneWorkingSet:
    """Aggregated constraints ``w . g_avg_c >= loss_avg_c - xi``.

    ``beta`` are the constraint multipliers, ``w = (1/lam) sum_c beta_c g_avg_c``
    with ``beta >= 0`` and ``sum(beta) <= n``; the slack objective is
    ``lam/2 ||w||^2 + n * xi`` so the optimum coincides with the n-slack
    problem at the same ``lam``.
    """

    n: int
    lam: float
    dim: int
    g_avg: list = field(default_factory=list)
    loss_avg: list = field(default_factory=list)
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    keys: set = field(default_factory=set)
    gram: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    iterations: int = 0
    converged: bool = False
    degraded: bool = False
    xi_history: list = field(default_factory=list)
    dual_history: list = field(default_factory=list)

    def __len__(self):
        return len(self.g_avg)

    def w(self) -> np.ndarray:
        w = np.zeros(self.dim)
        for b, g in zip(self.beta, self.g_avg):
            if b:
                g.add_to(w, b / self.lam)
        return w

    def xi(self, w=None) -> float:
        """Slack implied by ``w``: ``max(0, max_c loss_avg_c - w . g_avg_c)``."""
        if w is None:
            w = self.w()
        viol = [l - g.dot(w) for g, l in zip(self.g_avg, self.loss_avg)]
        return max([0.0] + viol)

    def restricted_dual(self) -> float:
        """Value of the restricted dual (a maximization), in ``n * xi`` units."""
        theta = self.beta / self.n
        L = self.n * np.asarray(self.loss_avg)
        return float(theta @ L - 0.5 / self.lam * theta @ self.gram @ theta)

    def add(self, g_avg: SparseVector, loss_avg: float, key) -> bool:
        if key in self.keys:
            return False
        G = g_avg * self.n
        dots = [G.dot(g.to_dense()) * self.n for g in self.g_avg]
        C = len(self.g_avg)
        gram = np.zeros((C + 1, C + 1))
        gram[:C, :C] = self.gram
        gram[C, :C] = gram[:C, C] = dots
        gram[C, C] = G.norm_sq()
        self.gram = gram
        self.g_avg.append(g_avg)
        self.loss_avg.append(float(loss_avg))
        self.beta = np.append(self.beta, 0.0)
        self.keys.add(key)
        return True

    def solve(self, tol: float = 1e-6, max_steps: int = 100000):
        """Pair-step coordinate ascent on the restricted dual.

        Index 0 of the internal simplex is the slack (the implicit constraint
        ``xi >= 0`` with zero features and zero loss).
        """
        C = len(self.g_avg)
        if C == 0:
            return
        K = np.zeros((C + 1, C + 1))
        K[1:, 1:] = self.gram
        L = np.concatenate([[0.0], self.n * np.asarray(self.loss_avg)])
        theta = np.concatenate([[max(0.0, 1.0 - self.beta.sum() / self.n)], self.beta / self.n])
        g = K @ theta / self.lam - L
        for _ in range(max_steps):
            p = int(np.argmin(g))
            q = int(np.argmax(np.where(theta > 0, g, -np.inf)))
            gap = g[q] - g[p]
            if gap <= tol:
                break
            nrm = K[p, p] + K[q, q] - 2.0 * K[p, q]
            tau = theta[q] if nrm <= 0 else min(self.lam * gap / nrm, theta[q])
            theta[p] += tau
            theta[q] -= tau
            if theta[q] < 0:
                theta[q] = 0.0
            g += (tau / self.lam) * (K[:, p] - K[:, q])
        self.beta = self.n * theta[1:]


def most_violated_constraint(w, data, k: int, d: int):
    """Loss-augmented decode of every example; returns ``(g_avg, loss_avg, violation, key)``."""
    n = len(data)
    dim = n_features(k, d)
    idx, val = [], []
    loss = 0.0
    viol = 0.0
    key = []
    for pair in data:
        y_hat, value = loss_augmented_viterbi(w, pair, k)
        viol += value - score(w, pair.x, pair.y, k)
        loss += hamming_loss(pair.y, y_hat)
        f = delta_feature(pair, y_hat, k, d)
        idx.append(f.indices)
        val.append(f.values)
        key.append(y_hat)
    g_avg = SparseVector.from_pairs(np.concatenate(idx), np.concatenate(val) / n, dim)
    return g_avg, loss / n, viol / n, tuple(key)


def cutting_plane_iteration(ws: CuttingPlaneWorkingSet, data, k: int, d: int, epsilon: float,
                            qp_tol: float = 1e-6) -> bool:
    """Solve the restricted dual, then add the most violated constraint unless
    it is within ``epsilon`` of the current slack. Returns True on convergence.
    """
    ws.solve(qp_tol)
    w = ws.w()
    xi = ws.xi(w)
    ws.xi_history.append(xi)
    ws.dual_history.append(ws.restricted_dual())
    g_avg, loss_avg, violation, key = most_violated_constraint(w, data, k, d)
    ws.iterations += 1
    if violation <= xi + epsilon or not ws.add(g_avg, loss_avg, key):
        ws.converged = True
    return ws.converged


def cutting_plane_train(data, lam: float, k: int, d: int, epsilon: float = 0.1, max_iter: int = 1000,
                        qp_tol: float = 1e-6, callback=None):
    """Returns ``(w, working_set)``; ``working_set.degraded`` is set if ``max_iter`` ran out."""
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    ws = CuttingPlaneWorkingSet(len(data), float(lam), n_features(k, d))
    while ws.iterations < max_iter:
        done = cutting_plane_iteration(ws, data, k, d, epsilon, qp_tol)
        if callback is not None:
            callback(ws)
        if done:
            break
    else:
        ws.degraded = True
    return ws.w(), ws


__all__ = [
    "CuttingPlaneWorkingSet",
    "SvmDualState",
    "cutting_plane_iteration",
    "cutting_plane_train",
    "dual_to_primal",
    "most_violated_constraint",
    "structured_hinge",
    "svm_primal_objective",
    "svm_sdm_epoch",
    "svm_sdm_example_update",
    "svm_sdm_train",
]
