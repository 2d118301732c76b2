import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from seqlab.crf import (
    AsgdState,
    CrfDualState,
    _entropic_pair_step,
    _kbest,
    asgd_epoch,
    asgd_step,
    best_candidate,
    calibrate_learning_rate,
    crf_objective,
    crf_objective_and_gradient,
    crf_sdm_epoch,
    crf_sdm_example_update,
    crf_sdm_train,
    lbfgs_train,
)
from seqlab.errors import CalibrationFailed, InvalidInputError, TrainingDiverged
from seqlab.inference import brute_force_expectation, brute_force_logz, potentials
from seqlab.maxmargin import dual_to_primal
from seqlab.model import joint_feature, make_pair, n_features, score

from helpers import central_differences, random_data, random_weights


def enumerated_objective(w, data, lam, k):
    return 0.5 * lam * w @ w + sum(brute_force_logz(w, p.x, k) - score(w, p.x, p.y, k) for p in data)


def dense_asgd(data, k, d, gamma0, lam_step, order):
    """Reference averaged SGD without any scaling tricks."""
    w = np.zeros(n_features(k, d))
    avg = np.zeros_like(w)
    for t, i in enumerate(order):
        p = data[i]
        gamma = gamma0 / (1 + gamma0 * lam_step * t)
        g = joint_feature(p.x, p.y, k, d).to_dense() - brute_force_expectation(w, p.x, k)
        w = (1 - gamma * lam_step) * w + gamma * g
        avg = w.copy() if t == 0 else (t * avg + w) / (t + 1)
    return w, avg


# ---------------------------------------------------------------------------
# objective and gradient


def test_objective_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(10):
        k, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        data = random_data(rng, 4, k, d, (1, 4))
        w = random_weights(rng, k, d)
        assert crf_objective(w, data, 0.7, k) == pytest.approx(enumerated_objective(w, data, 0.7, k), abs=1e-9)


def test_objective_at_zero_is_sum_of_length_log_k():
    rng = np.random.default_rng(2)
    data = random_data(rng, 6, 3, 4, (1, 5))
    f, _ = crf_objective_and_gradient(np.zeros(n_features(3, 4)), data, 1.0, 3)
    assert f == pytest.approx(sum(len(p.y) for p in data) * math.log(3))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(5):
        k, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        data = random_data(rng, 3, k, d, (1, 4))
        w = random_weights(rng, k, d)
        _, g = crf_objective_and_gradient(w, data, 0.5, k)
        fd = central_differences(lambda v: crf_objective(v, data, 0.5, k), w)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_objective_rejects_bad_arguments():
    data = [make_pair([[0]], (0,))]
    with pytest.raises(InvalidInputError):
        crf_objective(np.zeros(2), data, 0.0, 1)
    w = np.zeros(2)
    w[0] = np.inf
    with pytest.raises(InvalidInputError):
        crf_objective(w, data, 1.0, 1)


def test_lbfgs_matches_scipy_minimizer():
    rng = np.random.default_rng(6)
    data = random_data(rng, 8, 3, 4, (2, 5))
    res = lbfgs_train(data, 1.0, 3, 4, tol=1e-7)
    ref = minimize(lambda w: crf_objective_and_gradient(w, data, 1.0, 3), np.zeros(n_features(3, 4)),
                   jac=True, method="L-BFGS-B", options={"gtol": 1e-9, "ftol": 0})
    assert res.f == pytest.approx(ref.fun, abs=1e-8)
    np.testing.assert_allclose(res.x, ref.x, atol=1e-4)


# ---------------------------------------------------------------------------
# ASGD


def test_first_average_equals_first_iterate():
    rng = np.random.default_rng(7)
    data = random_data(rng, 3, 2, 3, (2, 4))
    st_ = AsgdState(n_features(2, 3), 0.3, 0.1)
    asgd_step(st_, data[0], 2)
    np.testing.assert_array_equal(st_.w_avg, st_.w)


@pytest.mark.parametrize("gamma0,lam", [(0.1, 0.05), (1.0, 0.2), (10.0, 0.01), (0.5, 0.0)])
def test_lazy_asgd_matches_dense_reference(gamma0, lam):
    rng = np.random.default_rng(8)
    data = random_data(rng, 6, 3, 3, (1, 4))
    order = list(rng.integers(0, 6, 40))
    state = AsgdState(n_features(3, 3), gamma0, lam)
    asgd_epoch(state, data, 3, order)
    w, avg = dense_asgd(data, 3, 3, gamma0, lam, order)
    np.testing.assert_allclose(state.w, w, rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(state.w_avg, avg, rtol=1e-9, atol=1e-10)


def test_asgd_dense_fallback_when_shrink_vanishes():
    # gamma0 * lam = 1 zeroes the weights at the first step
    rng = np.random.default_rng(9)
    data = random_data(rng, 4, 2, 2, (2, 3))
    order = [0, 1, 2, 3, 0, 1]
    state = AsgdState(n_features(2, 2), 2.0, 0.5)
    asgd_epoch(state, data, 2, order)
    w, avg = dense_asgd(data, 2, 2, 2.0, 0.5, order)
    np.testing.assert_allclose(state.w, w, atol=1e-12)
    np.testing.assert_allclose(state.w_avg, avg, atol=1e-12)


def test_asgd_learning_rate_schedule():
    s = AsgdState(4, 0.5, 0.1)
    assert s.rate() == 0.5
    s.t = 10
    assert s.rate() == pytest.approx(0.5 / 1.5)


def test_asgd_k1_zero_lambda_keeps_zero_weights():
    data = [make_pair([[0], [0]], (0, 0))]
    s = AsgdState(n_features(1, 1), 1.0, 0.0)
    asgd_epoch(s, data * 5, 1)
    assert not s.w.any() and not s.w_avg.any()


def test_asgd_rejects_bad_parameters():
    with pytest.raises(InvalidInputError):
        AsgdState(3, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        AsgdState(3, 1.0, -1.0)


def test_asgd_diverges_loudly():
    # the first gradient has an entry of 2.5, so a 1e308 step overflows
    data = [make_pair([[0]] * 5, (1, 1, 1, 1, 1))]
    s = AsgdState(n_features(2, 1), 1e308, 0.0)
    with pytest.raises(TrainingDiverged):
        asgd_epoch(s, data, 2)


def test_calibration_returns_a_candidate():
    rng = np.random.default_rng(10)
    data = random_data(rng, 10, 2, 3, (2, 5))
    gamma = calibrate_learning_rate(data, 1.0, 2, 3)
    objs = {}
    for g in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
        s = AsgdState(n_features(2, 3), g, 1.0 / len(data))
        asgd_epoch(s, data, 2)
        objs[g] = crf_objective(s.w_avg, data, 1.0, 2)
    assert gamma == min(objs, key=lambda g: (objs[g], g))


def test_calibration_all_diverging():
    data = [make_pair([[0]] * 3, (1, 0, 1))]
    with pytest.raises(CalibrationFailed):
        calibrate_learning_rate(data, 0.0 + 1e-9, 2, 1, candidates=[1e300, 1e305])


# ---------------------------------------------------------------------------
# sequential dual method


def test_entropic_pair_step_solves_root():
    rng = np.random.default_rng(11)
    for _ in range(200):
        ap, aq = rng.uniform(1e-12, 1, 2)
        c0, c1 = rng.normal(0, 5), rng.uniform(0, 10)
        t = _entropic_pair_step(c0, c1, ap, aq)
        assert -ap < t < aq
        r = c0 + c1 * t + math.log(ap + t) - math.log(aq - t)
        assert abs(r) < 1e-7 or (aq - t) < 1e-12 or (ap + t) < 1e-12


def test_kbest_matches_enumeration():
    rng = np.random.default_rng(12)
    for _ in range(20):
        k, L = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        U, T = rng.integers(-2, 3, (L, k)).astype(float), rng.integers(-2, 3, (k, k)).astype(float)
        scored = []
        for y in itertools.product(range(k), repeat=L):
            s = U[np.arange(L), y].sum() + sum(T[a, b] for a, b in zip(y, y[1:]))
            scored.append((-s, y))
        scored.sort()
        K = min(6, k ** L)
        got = _kbest(U, T, K)
        assert [y for _, y in got] == [y for _, y in scored[:K]]


def test_best_candidate_skips_members():
    rng = np.random.default_rng(13)
    data = random_data(rng, 1, 3, 3, (3, 3))
    w = random_weights(rng, 3, 3)
    U, T = potentials(w, data[0].x, 3)
    ranked = [y for _, y in _kbest(U, T, 27)]
    assert best_candidate(w, data[0], 3, set()) == ranked[0]
    assert best_candidate(w, data[0], 3, set(ranked[:4])) == ranked[4]
    assert best_candidate(w, data[0], 3, set(ranked)) is None


def test_single_label_update_is_noop():
    pair = make_pair([[0], [0]], (0, 0))
    state = CrfDualState([pair], 1.0, 1, 1)
    assert crf_sdm_example_update(state, 0) == 0.0
    assert state.alpha[0] == {(0, 0): 1.0}
    assert not state.w.any()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sdm_invariants(seed):
    rng = np.random.default_rng(seed)
    k, d = 2, 2
    data = random_data(rng, 4, k, d, (1, 3))
    state = CrfDualState(data, 0.5, k, d, max_active=6)
    dual = [state.dual_objective()]
    for _ in range(4):
        for i in rng.permutation(len(data)):
            crf_sdm_example_update(state, i)
            dual.append(state.dual_objective())
            for n, a in enumerate(state.alpha):
                assert sum(a.values()) == pytest.approx(1.0, abs=1e-12)
                assert min(a.values()) > 0.0
                assert data[n].y in a
                assert len(a) <= state.max_active
    np.testing.assert_allclose(state.w, dual_to_primal(state), atol=1e-9)
    assert all(b <= a + 1e-10 for a, b in zip(dual, dual[1:]))
    # weak duality: primal >= -dual
    assert state.primal_objective() >= -state.dual_objective() - 1e-9


def test_sdm_reaches_lbfgs_optimum_with_full_active_sets():
    rng = np.random.default_rng(14)
    k, d = 2, 3
    data = random_data(rng, 5, k, d, (1, 3))
    state = crf_sdm_train(data, 1.0, k, d, max_passes=300, max_active=8, inner_steps=20)
    ref = lbfgs_train(data, 1.0, k, d, tol=1e-8)
    assert state.primal_objective() == pytest.approx(ref.f, abs=1e-6)
    assert state.duality_gap() < 1e-6


def test_sdm_epoch_violation_shrinks():
    rng = np.random.default_rng(15)
    data = random_data(rng, 6, 2, 2, (1, 3))
    state = CrfDualState(data, 1.0, 2, 2, max_active=8)
    first = crf_sdm_epoch(state)
    for _ in range(100):
        last = crf_sdm_epoch(state, inner_steps=10)
    assert last < 1e-6 < first


def test_sdm_rejects_bad_eta():
    with pytest.raises(InvalidInputError):
        CrfDualState([make_pair([[0]], (0,))], 1.0, 1, 1, eta=0.0)
