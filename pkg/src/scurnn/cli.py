"""Command-line driver: ``scurnn train | eval | gradcheck``.

Exit codes: 0 success, 1 numeric fault (or failed gradient check),
2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .gradcheck import GROUPS, run_gradcheck

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2

log = logging.getLogger("scurnn")

# flag -> TrainConfig field
_OVERRIDES = {
    "task": "task",
    "seq_len": "seq_len",
    "hidden": "hidden",
    "batch": "batch",
    "iters": "iters",
    "epochs": "epochs",
    "train_size": "train_size",
    "eval_size": "eval_size",
    "eval_every": "eval_every",
    "opt_a": "opt_a",
    "opt_d": "opt_d",
    "opt_other": "opt_other",
    "seed": "seed",
    "data_seed": "data_seed",
    "permute_seed": "permute_seed",
    "data_dir": "data_dir",
    "out": "out",
    "clamp_b": "clamp_b",
    "target": "target",
    "h0_range": "h0_range",
    "probe_threshold": "probe_threshold",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    p.add_argument("--task", choices=("copying", "adding", "mnist", "mnist_permuted"))
    p.add_argument("--seq-len", dest="seq_len", type=int, help="T for copying/adding")
    p.add_argument("--hidden", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--eval-size", dest="eval_size", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--opt-a", dest="opt_a", metavar="KIND:LR")
    p.add_argument("--opt-d", dest="opt_d", metavar="KIND:LR")
    p.add_argument("--opt-other", dest="opt_other", metavar="KIND:LR")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--permute-seed", dest="permute_seed", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out")
    p.add_argument("--clamp-b", dest="clamp_b", action="store_true", default=None)
    p.add_argument("--target", type=float, help="stop once the eval metric reaches this value")
    p.add_argument("--h0-range", dest="h0_range", type=float)
    p.add_argument("--probe-threshold", dest="probe_threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scurnn", description="Scaled Cayley unitary RNN experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="train a model and write metrics.csv + checkpoint")
    _add_run_flags(train_p)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on the task's test split")
    _add_run_flags(eval_p)
    eval_p.add_argument("--checkpoint", required=True)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    gc.add_argument("--n", type=int, default=4)
    gc.add_argument("--tau", type=int, default=5)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--corrupt", choices=GROUPS, help="flip the sign of one analytic group (fault injection)")
    return parser


def load_config(args):
    from .train import ConfigError, TrainConfig

    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    data = cfg.to_dict()
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    try:
        return TrainConfig.from_dict(data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _limit_threads():
    threads = os.environ.get("SCURNN_THREADS")
    if not threads:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(threads))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    _limiter = _limit_threads()

    if args.command == "gradcheck":
        try:
            report = run_gradcheck(args.n, args.tau, args.seed, args.tol, corrupt=args.corrupt)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print("\n".join(report.lines()))
        return EXIT_OK if report.passed else EXIT_NUMERIC

    from .checkpoint import CheckpointError
    from .tasks import FormatError
    from .train import ConfigError, TrainingFault, run_eval, train

    try:
        cfg = load_config(args)
        if args.command == "train":
            result = train(cfg)
            last = result.rows[-1]
            print(json.dumps({k: last[k] for k in ("step", "eval_metric", "unitarity_error")}))
        else:
            print(json.dumps(run_eval(args.checkpoint, cfg)))
    except TrainingFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, FormatError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
