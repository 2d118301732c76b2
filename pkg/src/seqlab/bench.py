"""Per-pass training traces, validation-based stopping and lambda sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crf import (
    AsgdState,
    CrfDualState,
    asgd_epoch,
    calibrate_learning_rate,
    crf_sdm_epoch,
    lbfgs_trainer,
)
from .data import Dataset, ModelFile, load_conll, save_model
from .errors import ConfigError, InvalidInputError, SeqlabError
from .inference import sequence_log_likelihood, viterbi_decode
from .maxmargin import CuttingPlaneWorkingSet, SvmDualState, cutting_plane_iteration, svm_sdm_epoch
from .model import n_features
from .perceptron import PerceptronState, averaged_weights, calibrate_perceptron_rate, perceptron_epoch

log = logging.getLogger(__name__)

ALGORITHMS = ("asgd", "lbfgs", "crf-sdm", "svm-sdm", "cp", "perceptron")
LIKELIHOOD_ALGORITHMS = frozenset({"asgd", "lbfgs", "crf-sdm"})
DEFAULT_LAMBDA = {"asgd": 1.0, "lbfgs": 1.0, "crf-sdm": 1.0, "svm-sdm": 10.0, "cp": 10.0}
DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3)
TRACE_HEADER = ("pass", "cpu_s", "val_metric", "test_acc", "test_nll_total", "test_nll_avg", "stopped")
SUMMARY_HEADER = ("algo", "lambda", "status", "stop_pass", "cpu_s", "test_acc",
                  "test_nll_total", "test_nll_avg", "error")


@dataclass
class RunConfig:
    algo: str
    lam: float | None = None  # None: 10 for the hinge-loss methods, 1 for the CRF methods
    passes: int = 50
    patience: int = 3
    tol: float = 1e-4
    seed: int = 0
    train: str | None = None
    val: str | None = None
    test: str | None = None
    out: str | None = None
    model_out: str | None = None
    timing: str = "cpu"  # "off" writes zero cpu_s so traces are byte-reproducible
    gamma0: float | None = None
    calibration_size: int = 1000
    rate: float | None = None  # perceptron learning rate
    perceptron_init: str = "zero"
    eta: float = 1e-18
    max_active: int = 25
    inner_steps: int = 5
    epsilon: float = 0.1
    memory: int = 10
    dual_tol: float = 1e-9

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {', '.join(ALGORITHMS)}")
        if self.algo != "perceptron" and not self.resolved_lambda() > 0:
            raise ConfigError("lambda must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.passes < 0:
            raise ConfigError("passes must be non-negative")
        if self.timing not in ("cpu", "off"):
            raise ConfigError("timing must be 'cpu' or 'off'")
        if self.perceptron_init not in ("zero", "random"):
            raise ConfigError("perceptron init must be 'zero' or 'random'")

    def resolved_lambda(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return DEFAULT_LAMBDA.get(self.algo, 0.0)

    @property
    def higher_is_better(self) -> bool:
        return self.algo not in LIKELIHOOD_ALGORITHMS


@dataclass
class TraceRecord:
    pass_index: int
    cpu_s: float
    val_metric: float
    test_acc: float
    test_nll_total: float
    test_nll_avg: float
    stopped: bool

    def row(self):
        return [
            str(self.pass_index),
            f"{self.cpu_s:.6f}",
            f"{self.val_metric:.10g}",
            f"{self.test_acc:.6f}",
            f"{self.test_nll_total:.10g}",
            f"{self.test_nll_avg:.10g}",
            "1" if self.stopped else "0",
        ]


@dataclass
class RunResult:
    config: RunConfig
    records: list
    stop_pass: int
    weights: np.ndarray  # model at the stop marker
    k: int
    d: int

    @property
    def stop_record(self) -> TraceRecord:
        return self.records[self.stop_pass]


def evaluate(w, data, k: int):
    """``(token accuracy %, total NLL, NLL per sequence)`` of ``w`` on ``data``."""
    if len(data) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    correct = total = 0
    nll = np.zeros(len(data))
    for n, pair in enumerate(data):
        pred = viterbi_decode(w, pair.x, k)
        correct += sum(a == b for a, b in zip(pred, pair.y))
        total += len(pair.y)
        nll[n] = -sequence_log_likelihood(w, pair, k)
    nll_total = float(nll.sum())
    return 100.0 * correct / total, nll_total, nll_total / len(data)


def token_accuracy(w, data, k: int) -> float:
    correct = total = 0
    for pair in data:
        pred = viterbi_decode(w, pair.x, k)
        correct += sum(a == b for a, b in zip(pred, pair.y))
        total += len(pair.y)
    return 100.0 * correct / total


def total_nll(w, data, k: int) -> float:
    return float(np.sum([-sequence_log_likelihood(w, p, k) for p in data]))


def should_stop(history, patience: int, tol: float, higher_is_better: bool = True) -> bool:
    """True once ``patience`` passes have gone by without a relative improvement above ``tol``."""
    if not history:
        raise InvalidInputError("empty validation history")
    sign = 1.0 if higher_is_better else -1.0
    best = sign * history[0]
    best_at = 0
    for n, v in enumerate(history[1:], start=1):
        v = sign * v
        if v - best > tol * abs(best):
            best, best_at = v, n
    return len(history) - 1 - best_at >= patience


# ---------------------------------------------------------------------------
# Trainers with a common per-pass interface


class _Trainer:
    granularity = "pass"

    def __init__(self, config: RunConfig, data, k: int, d: int):
        self.config = config
        self.data = data
        self.k = k
        self.d = d
        self.lam = config.resolved_lambda()
        self.rng = np.random.default_rng(config.seed)

    def order(self):
        return self.rng.permutation(len(self.data))


class AsgdTrainer(_Trainer):
    def __init__(self, config, data, k, d):
        super().__init__(config, data, k, d)
        gamma0 = config.gamma0
        if gamma0 is None:
            size = min(config.calibration_size, len(data))
            sample = [data[i] for i in np.sort(self.rng.choice(len(data), size=size, replace=False))]
            gamma0 = calibrate_learning_rate(sample, self.lam, k, d)
            log.info("calibrated gamma0 = %g", gamma0)
        self.gamma0 = gamma0
        self.state = AsgdState(n_features(k, d), gamma0, self.lam / len(data))

    def run_pass(self):
        asgd_epoch(self.state, self.data, self.k, self.order())

    def weights(self):
        return self.state.w_avg


class LbfgsTrainer(_Trainer):
    granularity = "lbfgs-iteration"

    def __init__(self, config, data, k, d):
        super().__init__(config, data, k, d)
        self.opt = lbfgs_trainer(data, self.lam, k, d, memory=config.memory)

    def run_pass(self):
        if not self.opt.converged and not self.opt.degraded:
            self.opt.step()

    def weights(self):
        return self.opt.x


class CrfSdmTrainer(_Trainer):
    def __init__(self, config, data, k, d):
        super().__init__(config, data, k, d)
        self.state = CrfDualState(data, self.lam, k, d, eta=config.eta, max_active=config.max_active)

    def run_pass(self):
        crf_sdm_epoch(self.state, self.order(), self.config.inner_steps, self.config.dual_tol)

    def weights(self):
        return self.state.w


class SvmSdmTrainer(_Trainer):
    def __init__(self, config, data, k, d):
        super().__init__(config, data, k, d)
        self.state = SvmDualState(data, self.lam, k, d, max_active=config.max_active)

    def run_pass(self):
        svm_sdm_epoch(self.state, self.order(), self.config.inner_steps, self.config.dual_tol)

    def weights(self):
        return self.state.w


class CuttingPlaneTrainer(_Trainer):
    granularity = "cutting-plane-iteration"

    def __init__(self, config, data, k, d):
        super().__init__(config, data, k, d)
        self.ws = CuttingPlaneWorkingSet(len(data), self.lam, n_features(k, d))
        self._w = np.zeros(n_features(k, d))

    def run_pass(self):
        if not self.ws.converged:
            cutting_plane_iteration(self.ws, self.data, self.k, self.d, self.config.epsilon)
            self._w = self.ws.w()

    def weights(self):
        return self._w


class PerceptronTrainer(_Trainer):
    def __init__(self, config, data, k, d):
        super().__init__(config, data, k, d)
        rate = config.rate
        if rate is None:
            perm = self.rng.permutation(len(data))
            cut = max(1, int(round(0.8 * len(data))))
            train = [data[i] for i in perm[:cut]]
            hold = [data[i] for i in perm[cut:]] or train
            rate = calibrate_perceptron_rate(train, hold, k, d)
            log.info("calibrated perceptron rate = %g", rate)
        w0 = None
        if config.perceptron_init == "random":
            w0 = self.rng.normal(0.0, 0.01, n_features(k, d))
        self.state = PerceptronState(n_features(k, d), rate, w0)

    def run_pass(self):
        perceptron_epoch(self.state, self.data, self.k, self.order())

    def weights(self):
        return averaged_weights(self.state)


TRAINERS = {
    "asgd": AsgdTrainer,
    "lbfgs": LbfgsTrainer,
    "crf-sdm": CrfSdmTrainer,
    "svm-sdm": SvmSdmTrainer,
    "cp": CuttingPlaneTrainer,
    "perceptron": PerceptronTrainer,
}


# ---------------------------------------------------------------------------
# Runs


def _load_splits(config: RunConfig, train, val, test):
    if train is None:
        if config.train is None:
            raise ConfigError("no training data")
        train = load_conll(config.train)
    if len(train) == 0:
        raise InvalidInputError("training set is empty")
    if val is None and config.val is not None:
        val = load_conll(config.val, train.vocabulary)
    if test is None:
        if config.test is None:
            raise ConfigError("no test data")
        test = load_conll(config.test, train.vocabulary)
    if val is None:
        # No validation file: hold out a fifth of the training set.
        perm = np.random.default_rng(config.seed).permutation(len(train))
        cut = len(train) - max(1, len(train) // 5) if len(train) > 1 else 1
        val = train.subset(sorted(perm[cut:])) if len(train) > 1 else train
        train = train.subset(sorted(perm[:cut])) if len(train) > 1 else train
    return train, val, test


def run(config: RunConfig, train: Dataset | None = None, val: Dataset | None = None,
        test: Dataset | None = None) -> RunResult:
    """Train with per-pass evaluation; write the trace CSV and the model at the stop marker."""
    config.validate()
    train, val, test = _load_splits(config, train, val, test)
    k, d = train.k, train.d
    clock = time.process_time if config.timing == "cpu" else (lambda: 0.0)

    t0 = clock()
    trainer = TRAINERS[config.algo](config, train.pairs, k, d)
    cpu = clock() - t0

    records, history = [], []
    stop_pass, stop_weights = None, None
    for p in range(config.passes + 1):
        if p:
            t0 = clock()
            trainer.run_pass()
            cpu += clock() - t0
        w = trainer.weights()
        if config.higher_is_better:
            val_metric = token_accuracy(w, val.pairs, k)
        else:
            val_metric = total_nll(w, val.pairs, k)
        acc, nll_total, nll_avg = evaluate(w, test.pairs, k)
        history.append(val_metric)
        stopped = False
        if stop_pass is None and (p == config.passes
                                  or should_stop(history, config.patience, config.tol, config.higher_is_better)):
            stopped, stop_pass, stop_weights = True, p, w.copy()
        records.append(TraceRecord(p, cpu, val_metric, acc, nll_total, nll_avg, stopped))

    result = RunResult(config, records, stop_pass, stop_weights, k, d)
    if config.out:
        write_trace(config.out, records)
        meta = {
            "algo": config.algo,
            "lambda": config.resolved_lambda() if config.algo != "perceptron" else None,
            "granularity": trainer.granularity,
            "validation_metric": "accuracy" if config.higher_is_better else "nll_total",
            "stop_pass": stop_pass,
            "k": k,
            "d": d,
            "n_train": len(train),
            "n_val": len(val),
            "n_test": len(test),
            "config": dataclasses.asdict(config),
        }
        for attr in ("gamma0",):
            if hasattr(trainer, attr):
                meta[attr] = getattr(trainer, attr)
        if isinstance(trainer, PerceptronTrainer):
            meta["rate"] = trainer.state.eta
        Path(str(config.out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    model_out = config.model_out or (str(config.out) + ".model" if config.out else None)
    if model_out:
        save_model(model_out, ModelFile(list(train.alphabet.labels), list(train.feature_names), stop_weights))
    return result


def write_trace(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in records:
            writer.writerow(r.row())


def sweep_lambda(config: RunConfig, grid=DEFAULT_LAMBDA_GRID, out=None, trace_dir=None,
                 train=None, val=None, test=None) -> list:
    """One run per lambda; a failing run is recorded in its row and the sweep continues."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty lambda grid")
    if train is None or test is None:
        train, val, test = _load_splits(config, train, val, test)
    rows = []
    for lam in grid:
        cfg = dataclasses.replace(config, lam=lam, out=None, model_out=None)
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            cfg.out = str(Path(trace_dir) / f"{config.algo}_lambda_{lam:g}.csv")
        row = {"algo": config.algo, "lambda": f"{lam:g}", "status": "ok", "stop_pass": "",
               "cpu_s": "", "test_acc": "", "test_nll_total": "", "test_nll_avg": "", "error": ""}
        try:
            res = run(cfg, train, val, test)
        except (SeqlabError, FloatingPointError, OverflowError) as exc:
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        else:
            rec = res.stop_record
            row.update(stop_pass=str(res.stop_pass), cpu_s=f"{rec.cpu_s:.6f}",
                       test_acc=f"{rec.test_acc:.6f}", test_nll_total=f"{rec.test_nll_total:.10g}",
                       test_nll_avg=f"{rec.test_nll_avg:.10g}")
        rows.append(row)
    if out:
        write_summary(out, rows)
    return rows


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
