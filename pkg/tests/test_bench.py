import csv
import itertools
import json
import math

import numpy as np
import pytest

from seqlab.bench import (
    DEFAULT_LAMBDA_GRID,
    TRACE_HEADER,
    RunConfig,
    evaluate,
    run,
    should_stop,
    sweep_lambda,
)
from seqlab.data import generate_synthetic, load_model, write_conll
from seqlab.errors import ConfigError, InvalidInputError
from seqlab.inference import sequence_log_likelihood
from seqlab.model import n_features

from helpers import random_data, random_weights


@pytest.fixture(scope="module")
def splits():
    data, w_star = generate_synthetic(3, 10, 90, (3, 6), seed=11, label_noise=0.05)
    return data.subset(range(50)), data.subset(range(50, 70)), data.subset(range(70, 90)), w_star


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_zero_weights():
    data, _ = generate_synthetic(3, 5, 15, (2, 6), seed=3)
    acc, total, avg = evaluate(np.zeros(n_features(3, 5)), data.pairs, 3)
    zeros = sum(c == 0 for p in data for c in p.y)
    assert acc == pytest.approx(100.0 * zeros / data.n_tokens())
    assert total == pytest.approx(data.n_tokens() * math.log(3))
    assert avg == pytest.approx(total / len(data))


def test_evaluate_planted_weights_is_perfect():
    data, w = generate_synthetic(3, 5, 15, (2, 6), seed=4)
    assert evaluate(w, data.pairs, 3)[0] == 100.0


def test_evaluate_nll_matches_enumeration():
    rng = np.random.default_rng(5)
    data = random_data(rng, 6, 2, 3, (1, 3))
    w = random_weights(rng, 2, 3)
    expected = 0.0
    for p in data:
        scores = {}
        for y in itertools.product(range(2), repeat=len(p.y)):
            scores[y] = sequence_log_likelihood(w, p._replace(y=y), 2)
        expected -= scores[p.y]
        assert sum(math.exp(v) for v in scores.values()) == pytest.approx(1.0)
    _, total, _ = evaluate(w, data, 2)
    assert total == pytest.approx(expected, abs=1e-6)


def test_evaluate_empty_set():
    with pytest.raises(InvalidInputError):
        evaluate(np.zeros(4), [], 1)


# ---------------------------------------------------------------------------
# should_stop


def test_should_stop_rules():
    assert not should_stop([1, 2, 3, 4, 5], 3, 1e-4, higher_is_better=True)
    assert should_stop([5, 5, 5, 5], 3, 1e-4, higher_is_better=True)
    assert not should_stop([5, 5, 5], 3, 1e-4, higher_is_better=True)
    # NLL goes down when it improves
    assert not should_stop([9, 8, 7, 6], 3, 1e-4, higher_is_better=False)
    assert should_stop([9, 8, 8.5, 9, 10], 3, 1e-4, higher_is_better=False)
    with pytest.raises(InvalidInputError):
        should_stop([], 3, 1e-4)


def test_should_stop_tolerance_is_relative():
    base = 100.0
    tiny = [base, base * (1 + 5e-5), base * (1 + 9e-5), base * (1 + 9.9e-5)]
    # patience passes of sub-tolerance gains stop; one fewer does not
    assert should_stop(tiny, 3, 1e-4, higher_is_better=True)
    assert not should_stop(tiny[:3], 3, 1e-4, higher_is_better=True)
    assert not should_stop([base, base * 1.01, base * 1.02, base * 1.03], 3, 1e-4, higher_is_better=True)


# ---------------------------------------------------------------------------
# run


@pytest.mark.parametrize("algo", ["asgd", "lbfgs", "crf-sdm", "svm-sdm", "cp", "perceptron"])
def test_run_trace_invariants(algo, splits, tmp_path):
    train, val, test, _ = splits
    out = tmp_path / f"{algo}.csv"
    cfg = RunConfig(algo=algo, passes=6, patience=2, out=str(out), seed=1)
    res = run(cfg, train, val, test)
    rows = read_rows(out)
    assert tuple(rows[0]) == TRACE_HEADER
    body = rows[1:]
    assert [int(r[0]) for r in body] == list(range(7))
    cpu = [float(r[1]) for r in body]
    assert all(b >= a for a, b in zip(cpu, cpu[1:]))
    assert sum(r[6] == "1" for r in body) == 1
    for r in body:
        assert 0.0 <= float(r[3]) <= 100.0 and float(r[4]) >= 0.0
    stop = [int(r[0]) for r in body if r[6] == "1"][0]
    assert stop == res.stop_pass
    model = load_model(str(out) + ".model")
    np.testing.assert_array_equal(model.weights, res.weights)
    assert evaluate(model.weights, test.pairs, 3)[0] == pytest.approx(res.stop_record.test_acc)
    meta = json.loads((tmp_path / f"{algo}.csv.meta.json").read_text())
    assert meta["stop_pass"] == stop and meta["algo"] == algo
    if algo == "lbfgs":
        assert meta["granularity"] == "lbfgs-iteration"


def test_zero_passes_gives_single_row(splits, tmp_path):
    train, val, test, _ = splits
    out = tmp_path / "t.csv"
    res = run(RunConfig(algo="svm-sdm", passes=0, out=str(out)), train, val, test)
    rows = read_rows(out)
    assert len(rows) == 2 and rows[1][0] == "0" and rows[1][6] == "1"
    assert not res.weights.any()


def test_identical_seed_gives_identical_csv(splits, tmp_path):
    train, val, test, _ = splits
    texts = []
    for n in range(2):
        out = tmp_path / f"r{n}.csv"
        run(RunConfig(algo="asgd", passes=4, timing="off", seed=3, out=str(out)), train, val, test)
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_run_continues_after_stop(splits):
    train, val, test, _ = splits
    res = run(RunConfig(algo="perceptron", passes=25, patience=1, tol=0.5), train, val, test)
    assert res.stop_pass < 25
    assert len(res.records) == 26


def test_perceptron_reaches_full_training_accuracy():
    data, _ = generate_synthetic(3, 8, 40, (3, 6), seed=5, planted_weight_scale=2.0)
    res = run(RunConfig(algo="perceptron", passes=40, rate=1.0), data, data, data)
    assert max(r.test_acc for r in res.records) == 100.0


def test_run_from_files_with_default_validation_split(splits, tmp_path):
    train, _, test, _ = splits
    write_conll(train, tmp_path / "train.txt")
    write_conll(test, tmp_path / "test.txt")
    out = tmp_path / "trace.csv"
    cfg = RunConfig(algo="svm-sdm", passes=3, train=str(tmp_path / "train.txt"),
                    test=str(tmp_path / "test.txt"), out=str(out))
    run(cfg)
    meta = json.loads((tmp_path / "trace.csv.meta.json").read_text())
    assert meta["n_train"] + meta["n_val"] == len(train)
    assert meta["n_val"] == len(train) // 5


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(algo="nope").validate()
    with pytest.raises(ConfigError):
        RunConfig(algo="cp", lam=0.0).validate()
    with pytest.raises(ConfigError):
        RunConfig(algo="cp", patience=0).validate()
    assert RunConfig(algo="cp").resolved_lambda() == 10.0
    assert RunConfig(algo="lbfgs").resolved_lambda() == 1.0
    RunConfig(algo="perceptron").validate()


# ---------------------------------------------------------------------------
# sweep


def test_sweep_rows_follow_grid_order(splits, tmp_path):
    train, val, test, _ = splits
    out = tmp_path / "summary.csv"
    grid = [10.0, 0.1, 1.0]
    rows = sweep_lambda(RunConfig(algo="svm-sdm", passes=3), grid, out=str(out), train=train, val=val, test=test)
    assert [float(r["lambda"]) for r in rows] == grid
    assert all(r["status"] == "ok" for r in rows)
    assert len(read_rows(out)) == 4


def test_sweep_single_point(splits):
    train, val, test, _ = splits
    rows = sweep_lambda(RunConfig(algo="cp", passes=2), [1.0], train=train, val=val, test=test)
    assert len(rows) == 1


def test_sweep_records_failures_and_continues(splits):
    train, val, test, _ = splits
    rows = sweep_lambda(RunConfig(algo="lbfgs", passes=2), [-1.0, 1.0], train=train, val=val, test=test)
    assert rows[0]["status"] == "error" and "lambda" in rows[0]["error"]
    assert rows[1]["status"] == "ok"


def test_extreme_regularization_does_not_help():
    data, _ = generate_synthetic(3, 8, 60, (3, 6), seed=6)
    train, test = data.subset(range(40)), data.subset(range(40, 60))
    rows = sweep_lambda(RunConfig(algo="svm-sdm", passes=5), [1.0, 1e6], train=train, val=train, test=test)
    assert float(rows[1]["test_acc"]) <= float(rows[0]["test_acc"])


def test_sweep_empty_grid(splits):
    train, val, test, _ = splits
    with pytest.raises(ConfigError):
        sweep_lambda(RunConfig(algo="cp"), [], train=train, val=val, test=test)


def test_default_grid():
    assert DEFAULT_LAMBDA_GRID == (1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3)
