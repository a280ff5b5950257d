"""Command-line interface.

Subcommands:

  gen-data   draw a synthetic dataset and write it as JSON lines
  train      fit a victim scorer on a dataset with BCE
  attack     attack one instance and print the outcome record as JSON
  report     run a full experiment config and write CSV + outcomes
  check      run the built-in verification suites

Every command takes --seed where randomness is involved; identical seeds
give identical outputs. Exit status is 0 on success, 1 on any error, and
2 on usage problems.
"""
from __future__ import annotations

import argparse
import json
import sys

from .attack import AttackConfig, select_random, tkmia_attack
from .baselines import BASELINE_METHODS, BaselineSpec, run_baseline
from .checks import run_all_checks
from .harness import (
    ExperimentConfig,
    SyntheticSpec,
    gen_synthetic,
    load_dataset,
    run_experiment,
    save_dataset,
)
from .model import TrainConfig, load_scorer, make_affine, make_mlp, save_scorer, train_bce


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tkmia",
        description="Specified-label top-k attacks with ranking-measure reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--mean-relevant", type=float, required=True)
    p.add_argument("--correlation", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a victim scorer with BCE")
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", choices=("affine", "mlp"), default="affine")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--activation", choices=("tanh", "relu"), default="tanh")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="attack one instance, print outcome JSON")
    p.add_argument("--dataset", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--specified", help="comma-separated class indices")
    group.add_argument("--m", type=int, help="draw this many relevant labels at random")
    p.add_argument("--method", choices=("tkmia",) + BASELINE_METHODS, default="tkmia")
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--success-mode", choices=("c1_only", "strict"), default="c1_only")
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="run an experiment config file")
    p.add_argument("--config", required=True)

    p = sub.add_parser("check", help="run the verification suites")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(n=args.n, d=args.d, c=args.c,
                         mean_relevant=args.mean_relevant,
                         label_correlation=args.correlation, seed=args.seed)
    save_dataset(gen_synthetic(spec), args.out)
    print(f"wrote {args.n} instances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    d = dataset[0].x.shape[0]
    c = dataset[0].n_classes
    if args.arch == "affine":
        init = make_affine(d, c, seed=args.seed)
    else:
        init = make_mlp(d, args.hidden, c, seed=args.seed, activation=args.activation)
    config = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                         momentum=args.momentum, batch_size=args.batch_size,
                         seed=args.seed)
    save_scorer(train_bce(dataset, config, model=init), args.out)
    print(f"wrote trained {args.arch} scorer to {args.out}")
    return 0


def _cmd_attack(args) -> int:
    dataset = load_dataset(args.dataset)
    victim = load_scorer(args.victim)
    if not 0 <= args.index < len(dataset):
        raise ValueError(f"index {args.index} outside dataset of size {len(dataset)}")
    instance = dataset[args.index]
    if args.specified is not None:
        specified = tuple(int(i) for i in args.specified.split(","))
    else:
        specified = select_random(instance, args.m, seed=[args.seed, args.index])
    config = AttackConfig(k=args.k, eta=args.eta, alpha=args.alpha,
                          momentum=args.momentum, max_iter=args.max_iter,
                          success_mode=args.success_mode,
                          delta_threshold=args.delta)
    if args.method == "tkmia":
        outcome = tkmia_attack(victim, instance, specified, config)
    else:
        outcome = run_baseline(victim, instance, specified,
                               BaselineSpec(args.method, config))
    print(json.dumps(outcome.to_record(instance=args.index, k=args.k)))
    return 0


def _cmd_report(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    rows = run_experiment(config)
    print(f"wrote {len(rows)} report rows to {config.out_csv}")
    return 0


def _cmd_check(args) -> int:
    results = run_all_checks(seed=args.seed)
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"{name}: {status} ({detail})")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return 0 if failed == 0 else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "report": _cmd_report,
    "check": _cmd_check,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
