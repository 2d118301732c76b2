"""Averaged structured perceptron."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .inference import viterbi_decode
from .model import joint_feature, n_features

DEFAULT_RATE_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


class PerceptronState:
    """Current weights ``w``, accumulator ``u`` and visit counter ``c``.

    ``c`` counts completed visits. An update made while ``c`` visits are
    done adds ``c * step`` to ``u``, so ``w - u / c`` is the mean of the
    weight vectors recorded after each of the ``c`` visits.
    """

    def __init__(self, dim: int, eta: float = 1.0, w0=None):
        if not eta > 0:
            raise InvalidInputError("learning rate must be positive")
        self.eta = float(eta)
        self.w = np.zeros(dim) if w0 is None else np.array(w0, dtype=np.float64)
        self.u = np.zeros(dim)
        self.c = 0


def perceptron_step(state: PerceptronState, pair, k: int) -> bool:
    """Visit one example; returns True when it was mispredicted (and the weights moved)."""
    y_pred = viterbi_decode(state.w, pair.x, k)
    mistake = y_pred != pair.y
    if mistake:
        d = (state.w.shape[0] - k * k) // k
        step = joint_feature(pair.x, pair.y, k, d) - joint_feature(pair.x, y_pred, k, d)
        step.add_to(state.w, state.eta)
        step.add_to(state.u, state.c * state.eta)
    state.c += 1
    return mistake


def averaged_weights(state: PerceptronState) -> np.ndarray:
    if state.c == 0:
        return state.w.copy()
    # (c*w - u)/c rounds once, like (sum of snapshots)/c; w - u/c rounds twice
    return (state.c * state.w - state.u) / state.c


def perceptron_epoch(state: PerceptronState, data, k: int, order=None) -> int:
    """One pass; returns the number of mistakes."""
    return sum(perceptron_step(state, data[i], k) for i in (range(len(data)) if order is None else order))


def token_errors(w, data, k: int) -> int:
    return sum(sum(a != b for a, b in zip(viterbi_decode(w, p.x, k), p.y)) for p in data)


def calibrate_perceptron_rate(train, holdout, k: int, d: int, candidates=DEFAULT_RATE_GRID) -> float:
    """Rate whose one-pass averaged weights make the fewest holdout token errors; ties go to the smaller rate."""
    if not train or not holdout:
        raise InvalidInputError("both calibration splits must be non-empty")
    best = None
    for eta in sorted(candidates):
        state = PerceptronState(n_features(k, d), eta)
        perceptron_epoch(state, train, k)
        err = token_errors(averaged_weights(state), holdout, k)
        if best is None or err < best[0]:
            best = (err, eta)
    return best[1]
