"""``seqlab`` command line: train, sweep, eval, synth.

Exit status: 0 success, 1 usage error, 2 data or format error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .data import ModelFile, generate_synthetic, load_conll, load_model, save_model, write_conll
from .errors import CalibrationFailed, ConfigError, FormatError, InvalidInputError, TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _add_run_options(p):
    p.add_argument("--algo", required=True, choices=bench.ALGORITHMS)
    p.add_argument("--train", required=True, help="training column file")
    p.add_argument("--val", help="validation column file (default: hold out 20%% of --train)")
    p.add_argument("--test", required=True, help="test column file")
    p.add_argument("--lambda", dest="lam", type=float, help="regularization (default 10 for svm-sdm/cp, 1 otherwise)")
    p.add_argument("--passes", type=int, default=50)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4, help="relative improvement tolerance for stopping")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", choices=("cpu", "off"), default="cpu",
                   help="'off' writes 0 cpu seconds for byte-reproducible traces")
    g = p.add_argument_group("trainer options")
    g.add_argument("--gamma0", type=float, help="ASGD initial rate (default: calibrated)")
    g.add_argument("--calibration-size", type=int, default=1000)
    g.add_argument("--rate", type=float, help="perceptron learning rate (default: calibrated)")
    g.add_argument("--perceptron-init", choices=("zero", "random"), default="zero")
    g.add_argument("--eta", type=float, default=1e-18, help="CRF-SDM minimum dual mass")
    g.add_argument("--max-active", type=int, default=25)
    g.add_argument("--inner-steps", type=int, default=5)
    g.add_argument("--epsilon", type=float, default=0.1, help="cutting-plane tolerance")
    g.add_argument("--memory", type=int, default=10, help="L-BFGS history size")
    g.add_argument("--dual-tol", type=float, default=1e-9)


def build_parser():
    parser = _Parser(prog="seqlab", description="Linear-chain sequence labeling benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one algorithm and write a per-pass trace")
    _add_run_options(p)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--model", help="model path (default: <out>.model)")

    p = sub.add_parser("sweep", help="run one training per lambda and write a summary")
    _add_run_options(p)
    p.add_argument("--grid", type=_float_list, default=list(bench.DEFAULT_LAMBDA_GRID))
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--trace-dir", help="also write each run's trace here")

    p = sub.add_parser("eval", help="evaluate a saved model on a column file")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("synth", help="write synthetic planted-weight data")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-val", type=int, default=50)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--scale", type=float, default=1.0, help="planted weight scale")
    p.add_argument("--features-per-token", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.0, help="label noise probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    return parser


def _config(args) -> bench.RunConfig:
    return bench.RunConfig(
        algo=args.algo, lam=args.lam, passes=args.passes, patience=args.patience, tol=args.tol,
        seed=args.seed, train=args.train, val=args.val, test=args.test, timing=args.timing,
        gamma0=args.gamma0, calibration_size=args.calibration_size, rate=args.rate,
        perceptron_init=args.perceptron_init, eta=args.eta, max_active=args.max_active,
        inner_steps=args.inner_steps, epsilon=args.epsilon, memory=args.memory, dual_tol=args.dual_tol,
    )


def cmd_train(args):
    cfg = _config(args)
    cfg.out, cfg.model_out = args.out, args.model
    res = bench.run(cfg)
    rec = res.stop_record
    print(f"stopped at pass {res.stop_pass}: test_acc={rec.test_acc:.2f} "
          f"test_nll_total={rec.test_nll_total:.4f} cpu_s={rec.cpu_s:.3f}")


def cmd_sweep(args):
    rows = bench.sweep_lambda(_config(args), args.grid, out=args.out, trace_dir=args.trace_dir)
    for r in rows:
        print(f"lambda={r['lambda']:>8} {r['status']:5} acc={r['test_acc'] or '-'} nll={r['test_nll_total'] or '-'}")


def cmd_eval(args):
    model: ModelFile = load_model(args.model)
    test = load_conll(args.test, model.vocabulary)
    acc, total, avg = bench.evaluate(model.weights, test.pairs, model.k)
    print(f"test_acc={acc:.4f} test_nll_total={total:.6f} test_nll_avg={avg:.6f}")


def cmd_synth(args):
    sizes = {"train": args.n_train, "val": args.n_val, "test": args.n_test}
    total = sum(sizes.values())
    data, w_star = generate_synthetic(args.k, args.d, total, (args.min_len, args.max_len), args.seed,
                                      args.scale, args.features_per_token, args.noise)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = 0
    for name, size in sizes.items():
        write_conll(data.subset(range(start, start + size)), out / f"{name}.txt")
        start += size
    save_model(out / "planted.model", ModelFile(list(data.alphabet.labels), list(data.feature_names), w_star))
    print(f"wrote {', '.join(f'{n}.txt ({s})' for n, s in sizes.items())} and planted.model to {out}")


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"seqlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, CalibrationFailed) as exc:
        print(f"seqlab: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, InvalidInputError, OSError) as exc:
        print(f"seqlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
