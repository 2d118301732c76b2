"""Exact dynamic-programming inference on the linear chain.

All routines reduce ``(w, x)`` to node potentials ``U[j, c]`` (emission
scores) and a transition matrix ``T[a, b]``; a labeling scores
``sum_j U[j, y_j] + sum_j T[y_j, y_{j+1}]``.

Ties in the argmax are broken towards the lexicographically smallest label
sequence: max-scores-to-go are computed right to left, then the path is read
left to right taking the smallest optimal label at every position.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError
from .model import (
    LabeledPair,
    SparseVector,
    TokenSequence,
    check_labels,
    input_dim,
    joint_feature,
    n_features,
    split_weights,
)

DEFAULT_ENUMERATION_CAP = 10**6


def potentials(w: np.ndarray, x: TokenSequence, k: int):
    """Return ``(U, T)`` with ``U`` of shape ``(L, k)`` and ``T`` of shape ``(k, k)``."""
    trans, emis = split_weights(w, k)
    d = emis.shape[1]
    U = np.asarray(x.matrix(d) @ emis.T)
    return U, trans


def _check_finite(U, T):
    if not (np.isfinite(U).all() and np.isfinite(T).all()):
        raise InvalidInputError("non-finite weights")


def chain_argmax(U: np.ndarray, T: np.ndarray):
    """Best labeling and its score; lexicographically smallest among ties."""
    L = U.shape[0]
    togo = np.empty_like(U)
    togo[L - 1] = U[L - 1]
    for j in range(L - 2, -1, -1):
        togo[j] = U[j] + (T + togo[j + 1]).max(axis=1)
    c = int(np.argmax(togo[0]))
    value = togo[0, c]
    path = [c]
    for j in range(1, L):
        c = int(np.argmax(T[c] + togo[j]))
        path.append(c)
    return tuple(path), float(value)


def viterbi_decode(w: np.ndarray, x: TokenSequence, k: int) -> tuple:
    U, T = potentials(w, x, k)
    _check_finite(U, T)
    return chain_argmax(U, T)[0]


def loss_augmented_viterbi(w: np.ndarray, pair: LabeledPair, k: int):
    """``argmax_y w.f(x_i, y) + hamming(y_i, y)`` and the attained value."""
    U, T = potentials(w, pair.x, k)
    _check_finite(U, T)
    check_labels(pair.y, len(pair.x), k)
    U = U + 1.0
    U[np.arange(U.shape[0]), pair.y] -= 1.0
    return chain_argmax(U, T)


@dataclass
class Marginals:
    node: np.ndarray  # (L, k)
    edge: np.ndarray  # (L-1, k, k)
    log_z: float
    log_z_backward: float


def _lse(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(a - m).sum(axis=axis))


def chain_marginals(U: np.ndarray, T: np.ndarray) -> Marginals:
    """Log-space forward-backward."""
    L, k = U.shape
    alpha = np.empty_like(U)
    beta = np.zeros_like(U)
    alpha[0] = U[0]
    for j in range(1, L):
        alpha[j] = U[j] + _lse(alpha[j - 1][:, None] + T, axis=0)
    for j in range(L - 2, -1, -1):
        beta[j] = _lse(T + (U[j + 1] + beta[j + 1])[None, :], axis=1)
    log_z = float(_lse(alpha[L - 1], axis=0))
    log_z_back = float(_lse(U[0] + beta[0], axis=0))
    node = np.exp(alpha + beta - log_z)
    edge = np.exp(alpha[:-1, :, None] + T[None, :, :] + (U[1:] + beta[1:])[:, None, :] - log_z)
    return Marginals(node, edge, log_z, log_z_back)


def forward_backward(w: np.ndarray, x: TokenSequence, k: int) -> Marginals:
    U, T = potentials(w, x, k)
    _check_finite(U, T)
    return chain_marginals(U, T)


def sequence_log_likelihood(w: np.ndarray, pair: LabeledPair, k: int) -> float:
    """log p(y_i | x_i; w); always <= 0."""
    U, T = potentials(w, pair.x, k)
    _check_finite(U, T)
    check_labels(pair.y, len(pair.x), k)
    y = np.asarray(pair.y)
    s = U[np.arange(len(y)), y].sum() + T[y[:-1], y[1:]].sum()
    return min(float(s) - chain_marginals(U, T).log_z, 0.0)


def marginal_features(marg: Marginals, x: TokenSequence, k: int, d: int) -> SparseVector:
    """E_p f(x, y) assembled from node and edge marginals."""
    trans = marg.edge.sum(axis=0).ravel() if marg.edge.shape[0] else np.zeros(k * k)
    feats = np.unique(x.indices)
    if feats.size:
        # counts[j, m] = 1 iff token j carries feature feats[m]
        cols = np.searchsorted(feats, x.indices)
        counts = np.zeros((len(x), feats.size))
        counts[x.positions, cols] = 1.0
        emis = marg.node.T @ counts  # (k, m)
        emis_idx = k * k + (np.arange(k)[:, None] * d + feats[None, :])
    else:
        emis = np.zeros(0)
        emis_idx = np.zeros(0, dtype=np.int64)
    idx = np.concatenate([np.arange(k * k), emis_idx.ravel()])
    val = np.concatenate([trans, emis.ravel()])
    return SparseVector.from_pairs(idx, val, n_features(k, d))


def expected_feature(w: np.ndarray, x: TokenSequence, k: int) -> SparseVector:
    d = input_dim(w, k)
    return marginal_features(forward_backward(w, x, k), x, k, d)


# ---------------------------------------------------------------------------
# Exhaustive oracles. Scores go through joint_feature, not the DP potentials.


def enumerate_labelings(length: int, k: int, cap: int = DEFAULT_ENUMERATION_CAP):
    """All labelings in lexicographic order; refuses beyond ``cap``."""
    if k ** length > cap:
        raise InvalidInputError(f"{k}^{length} labelings exceed the enumeration cap {cap}")
    return itertools.product(range(k), repeat=length)


def _enumerated_scores(w, x, k, cap):
    d = input_dim(w, k)
    ys = list(enumerate_labelings(len(x), k, cap))
    feats = [joint_feature(x, y, k, d) for y in ys]
    return ys, feats, np.array([f.dot(w) for f in feats])


def brute_force_argmax(w, x, k, y_true=None, cap: int = DEFAULT_ENUMERATION_CAP):
    """Exhaustive argmax of the score (plus Hamming loss to ``y_true`` if given)."""
    best_y, best = None, -np.inf
    d = input_dim(w, k)
    for y in enumerate_labelings(len(x), k, cap):
        v = joint_feature(x, y, k, d).dot(w)
        if y_true is not None:
            v += sum(a != b for a, b in zip(y, y_true))
        if v > best:
            best_y, best = y, v
    return tuple(best_y), float(best)


def brute_force_logz(w, x, k, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    _, _, scores = _enumerated_scores(w, x, k, cap)
    return float(logsumexp(scores))


def brute_force_expectation(w, x, k, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Dense ``sum_y p(y|x) f(x, y)`` by enumeration."""
    _, feats, scores = _enumerated_scores(w, x, k, cap)
    p = np.exp(scores - logsumexp(scores))
    out = np.zeros(w.shape[0])
    for pr, f in zip(p, feats):
        f.add_to(out, pr)
    return out
