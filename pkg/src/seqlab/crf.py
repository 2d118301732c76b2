"""Likelihood-side trainers: averaged SGD, batch L-BFGS and the sequential dual method.

All three minimize the L2-regularized conditional negative log-likelihood

    F(w) = lam/2 ||w||^2 - sum_i log p(y_i | x_i; w)

or, for the dual method, its entropic dual

    D(alpha) = lam/2 ||w(alpha)||^2 + sum_{i,y} alpha_i(y) log alpha_i(y),
    w(alpha) = (1/lam) sum_{i,y} alpha_i(y) delta_f_i(y),

with ``min F = -min D``.
"""

from __future__ import annotations

import math

import numpy as np

from ._active import ActiveSetState, dual_to_primal
from .errors import CalibrationFailed, InvalidInputError, TrainingDiverged
from .inference import chain_argmax, chain_marginals, marginal_features, potentials
from .lbfgs import Lbfgs, LbfgsResult, minimize_lbfgs
from .model import input_dim, joint_feature, n_features

DEFAULT_GAMMA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


def _example_terms(w, pair, k, d, scale=1.0):
    """Negative log-likelihood of one pair, f(x, y) and E_p f(x, y) at ``scale * w``."""
    U, T = potentials(w, pair.x, k)
    if scale != 1.0:
        U = U * scale
        T = T * scale
    if not (np.isfinite(U).all() and np.isfinite(T).all()):
        raise TrainingDiverged("non-finite potentials")
    marg = chain_marginals(U, T)
    y = np.asarray(pair.y)
    gold = U[np.arange(len(y)), y].sum() + T[y[:-1], y[1:]].sum()
    return (
        marg.log_z - float(gold),
        joint_feature(pair.x, pair.y, k, d),
        marginal_features(marg, pair.x, k, d),
    )


def crf_objective_and_gradient(w, data, lam: float, k: int):
    """Objective ``F(w)`` and its gradient ``lam*w - sum_i (f_i - E f_i)``."""
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    if not np.isfinite(w).all():
        raise InvalidInputError("non-finite weights")
    d = input_dim(w, k)
    grad = lam * w
    nll = np.zeros(len(data))
    for n, pair in enumerate(data):
        nll[n], f_true, f_exp = _example_terms(w, pair, k, d)
        f_true.add_to(grad, -1.0)
        f_exp.add_to(grad, 1.0)
    return 0.5 * lam * float(w @ w) + float(nll.sum()), grad


def crf_objective(w, data, lam: float, k: int) -> float:
    return crf_objective_and_gradient(w, data, lam, k)[0]


# ---------------------------------------------------------------------------
# Averaged SGD


class AsgdState:
    """Averaged SGD iterate stored in scaled form so a step touches only O(nnz) entries.

    ``w = a * v`` and ``w_avg = m * z + b * v``; the dense arrays are
    refolded when a scalar drifts towards underflow.

    ``lam`` is the regularization weight applied per step. To minimize
    ``F`` over ``n`` examples use ``lam / n`` here.
    """

    def __init__(self, dim: int, gamma0: float, lam: float, w0=None):
        if not gamma0 > 0:
            raise InvalidInputError("gamma0 must be positive")
        if lam < 0:
            raise InvalidInputError("lambda must be non-negative")
        self.gamma0 = float(gamma0)
        self.lam = float(lam)
        self.v = np.zeros(dim) if w0 is None else np.array(w0, dtype=np.float64)
        self.a = 1.0
        self.z = np.zeros(dim)
        self.m = 1.0
        self.b = 1.0
        self.t = 0

    @property
    def w(self) -> np.ndarray:
        return self.a * self.v

    @property
    def w_avg(self) -> np.ndarray:
        return self.m * self.z + self.b * self.v

    def rate(self) -> float:
        return self.gamma0 / (1.0 + self.gamma0 * self.lam * self.t)

    def _fold(self):
        if self.a != 1.0:
            self.v *= self.a
            self.b /= self.a
            self.a = 1.0
        if self.m != 1.0:
            self.z *= self.m
            self.m = 1.0


def asgd_step(state: AsgdState, pair, k: int) -> AsgdState:
    """One stochastic gradient step on ``pair`` followed by the running-average update."""
    d = input_dim(state.v, k)
    gamma = state.rate()
    _, f_true, f_exp = _example_terms(state.v, pair, k, d, scale=state.a)
    grad = f_true - f_exp  # minus the loss gradient
    shrink = 1.0 - gamma * state.lam
    t = state.t
    rho = t / (t + 1.0)
    if shrink <= 1e-12:
        # Regularization step overshoots zero; fall back to dense arithmetic.
        w_new = shrink * state.w
        with np.errstate(over="ignore", invalid="ignore"):
            grad.add_to(w_new, gamma)
        if not np.isfinite(w_new).all():
            raise TrainingDiverged("non-finite ASGD update; lower gamma0")
        avg = w_new.copy() if t == 0 else rho * state.w_avg + (1.0 - rho) * w_new
        state.v, state.a = w_new, 1.0
        state.z, state.m, state.b = avg, 1.0, 0.0
    else:
        a_new = shrink * state.a
        with np.errstate(over="ignore", invalid="ignore"):
            step = grad * (gamma / a_new)
        with np.errstate(over="ignore", invalid="ignore"):
            step.add_to(state.v)
        if not np.isfinite(state.v[step.indices]).all():
            raise TrainingDiverged("non-finite ASGD update; lower gamma0")
        state.a = a_new
        if t == 0:
            state.z[:] = 0.0
            state.m = 1.0
            state.b = a_new
        else:
            step.add_to(state.z, -state.b / state.m)
            state.m *= rho
            state.b = rho * state.b + (1.0 - rho) * a_new
        if state.a < 1e-6 or state.m < 1e-6:
            state._fold()
    state.t = t + 1
    if not (math.isfinite(state.a) and math.isfinite(state.b)):
        raise TrainingDiverged("non-finite ASGD scale factors")
    return state


def asgd_epoch(state: AsgdState, data, k: int, order=None) -> AsgdState:
    for i in (range(len(data)) if order is None else order):
        asgd_step(state, data[i], k)
    return state


def calibrate_learning_rate(sample, lam: float, k: int, d: int, candidates=DEFAULT_GAMMA_GRID):
    """Pick the initial rate whose one-epoch averaged iterate has the lowest objective on ``sample``.

    Ties keep the earliest candidate; diverging candidates are skipped.
    """
    if not sample:
        raise InvalidInputError("calibration sample is empty")
    candidates = list(candidates)
    if not candidates:
        raise InvalidInputError("no learning-rate candidates")
    best, best_obj = None, math.inf
    for gamma0 in candidates:
        state = AsgdState(n_features(k, d), gamma0, lam / len(sample))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                asgd_epoch(state, sample, k)
                obj = crf_objective(state.w_avg, sample, lam, k)
        except (TrainingDiverged, InvalidInputError, FloatingPointError):
            continue
        if math.isfinite(obj) and obj < best_obj:
            best, best_obj = gamma0, obj
    if best is None:
        raise CalibrationFailed("every learning-rate candidate diverged")
    return best


# ---------------------------------------------------------------------------
# Batch L-BFGS


def lbfgs_trainer(data, lam: float, k: int, d: int, memory=10, tol=1e-6, w0=None) -> Lbfgs:
    """An :class:`Lbfgs` minimizer of ``F`` positioned at ``w0`` (default zero)."""
    x0 = np.zeros(n_features(k, d)) if w0 is None else w0
    return Lbfgs(lambda w: crf_objective_and_gradient(w, data, lam, k), x0, memory=memory, tol=tol)


def lbfgs_train(data, lam: float, k: int, d: int, memory=10, max_iter=500, tol=1e-6,
                callback=None) -> LbfgsResult:
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    return minimize_lbfgs(
        lambda w: crf_objective_and_gradient(w, data, lam, k),
        np.zeros(n_features(k, d)),
        memory=memory, max_iter=max_iter, tol=tol, callback=callback,
    )


# ---------------------------------------------------------------------------
# Sequential dual method on the entropic dual


class CrfDualState(ActiveSetState):
    """Active sets ``V_i`` holding labelings with mass above ``eta``."""

    def __init__(self, data, lam: float, k: int, d: int, eta: float = 1e-18, max_active: int = 25):
        super().__init__(data, lam, k, d, max_active)
        if not 0 < eta < 1:
            raise InvalidInputError("eta must be in (0, 1)")
        self.eta = eta

    def gradients(self, i: int) -> dict:
        """Partial derivatives of ``D`` w.r.t. the active ``alpha_i(y)``."""
        return {y: self.margin(i, y) + math.log(a) + 1.0 for y, a in self.alpha[i].items()}

    def dual_objective(self) -> float:
        ent = sum(a * math.log(a) for al in self.alpha for a in al.values() if a > 0)
        return 0.5 * self.lam * float(self.w @ self.w) + ent

    def primal_objective(self) -> float:
        return crf_objective(self.w, self.data, self.lam, self.k)

    def duality_gap(self) -> float:
        return self.primal_objective() + self.dual_objective()


def _kbest(U, T, K):
    """The ``K`` best labelings as ``(score, path)``, best first."""
    L, k = U.shape
    beams = [[(U[0, c], (c,))] for c in range(k)]
    for j in range(1, L):
        nxt = []
        for c in range(k):
            cand = [(s + T[a, c] + U[j, c], p + (c,)) for a in range(k) for s, p in beams[a]]
            cand.sort(key=lambda e: (-e[0], e[1]))
            nxt.append(cand[:K])
        beams = nxt
    final = [e for b in beams for e in b]
    final.sort(key=lambda e: (-e[0], e[1]))
    return final[:K]


def best_candidate(w, pair, k: int, exclude) -> tuple | None:
    """Viterbi labeling, or the best labeling outside ``exclude`` when Viterbi is already there."""
    U, T = potentials(w, pair.x, k)
    y_hat = chain_argmax(U, T)[0]
    if y_hat not in exclude:
        return y_hat
    for _, y in _kbest(U, T, len(exclude) + 1):
        if y not in exclude:
            return y
    return None


def _entropic_pair_step(c0: float, c1: float, ap: float, aq: float, max_iter: int = 50) -> float:
    """Root of ``c0 + c1*t + log(ap + t) - log(aq - t)`` on ``(-ap, aq)``.

    Newton from ``t = 0`` kept inside a shrinking bracket; bisection if
    Newton has not settled after ``max_iter`` iterations.
    """
    lo, hi = -ap, aq
    t = 0.0
    for _ in range(max_iter):
        r = c0 + c1 * t + math.log(ap + t) - math.log(aq - t)
        if r == 0:
            return t
        if r > 0:
            hi = t
        else:
            lo = t
        h = c1 + 1.0 / (ap + t) + 1.0 / (aq - t)
        nxt = t - r / h
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - t) <= 1e-15 * max(abs(t), ap, 1e-300):
            return nxt
        t = nxt
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        r = c0 + c1 * mid + math.log(ap + mid) - math.log(aq - mid)
        if r > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def crf_sdm_example_update(state: CrfDualState, i: int, inner_steps: int = 5, tol: float = 1e-9) -> float:
    """Candidate insertion plus up to ``inner_steps`` pair updates on example ``i``.

    Returns the largest gradient spread ``max g - min g`` seen over ``V_i``
    (including a candidate that was worth inserting); zero means the
    example is optimal.
    """
    pair = state.data[i]
    gold = pair.y
    act = state.alpha[i]
    lam, eta = state.lam, state.eta
    violation = 0.0

    cand = best_candidate(state.w, pair, state.k, act)
    if cand is not None:
        g = state.gradients(i)
        g_cand = state.margin(i, cand) + math.log(eta) + 1.0
        spread = max(g.values()) - g_cand
        if spread > tol:
            violation = spread
            donor = max(act, key=act.get)
            state.insert(i, cand, 0.0)
            state.move(i, cand, donor, eta)
            if len(act) > state.max_active:
                state.evict_smallest(i, protect=(cand,))

    for _ in range(inner_steps):
        g = state.gradients(i)
        p = min(g, key=g.get)
        q = max(g, key=g.get)
        spread = g[q] - g[p]
        violation = max(violation, spread)
        if spread <= tol:
            break
        diff = state.delta(i, p) - state.delta(i, q)
        tau = _entropic_pair_step(diff.dot(state.w), diff.norm_sq() / lam, act[p], act[q])
        state.move(i, p, q, tau)
        if act[q] <= 0.0:
            act[q] = 0.0
        if act[q] <= eta and q != gold:
            state.remove(i, q)
        elif act[q] <= 0.0:
            act[q] = np.finfo(float).tiny
    return violation


def crf_sdm_epoch(state: CrfDualState, order=None, inner_steps: int = 5, tol: float = 1e-9) -> float:
    """One pass of example updates; returns the largest violation met."""
    worst = 0.0
    for i in (range(len(state.data)) if order is None else order):
        worst = max(worst, crf_sdm_example_update(state, i, inner_steps, tol))
    return worst


def crf_sdm_train(data, lam, k, d, max_passes=100, tol=1e-9, eta=1e-18, max_active=25,
                  inner_steps=5, seed=0, callback=None) -> CrfDualState:
    state = CrfDualState(data, lam, k, d, eta=eta, max_active=max_active)
    rng = np.random.default_rng(seed)
    for _ in range(max_passes):
        worst = crf_sdm_epoch(state, rng.permutation(len(data)), inner_steps, tol)
        if callback is not None:
            callback(state)
        if worst <= tol:
            break
    return state


__all__ = [
    "AsgdState",
    "CrfDualState",
    "DEFAULT_GAMMA_GRID",
    "asgd_epoch",
    "asgd_step",
    "best_candidate",
    "calibrate_learning_rate",
    "crf_objective",
    "crf_objective_and_gradient",
    "crf_sdm_epoch",
    "crf_sdm_example_update",
    "crf_sdm_train",
    "dual_to_primal",
    "lbfgs_train",
    "lbfgs_trainer",
]
