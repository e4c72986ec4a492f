"""Command-line entry point: train, eval, gradcheck, equivcheck.

Exit codes: 0 success, 1 check failure or numeric abort, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import verify
from .blocks import load_checkpoint
from .config import ConfigError, RunConfig, load_run_config, run_config_from_dict
from .experiment import evaluate, held_out_set, rng_streams, train
from .numerics import NumericOverflowError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load(args) -> RunConfig:
    cfg = load_run_config(args.config)
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem

    def log(rec):
        metric = rec.eval_mse if rec.eval_mse is not None else rec.eval_accuracy
        print(f"step {rec.step:6d}  lr {rec.lr:.2e}  train {rec.train_loss:.4f}  "
              f"eval {rec.eval_loss:.4f}  metric {metric:.4f}", flush=True)

    try:
        result = train(cfg, out, log=None if args.quiet else log)
    except NumericOverflowError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"finished after {result.steps_run} steps; metrics and checkpoint in {out}")
    for k, v in result.final.items():
        print(f"  {k} = {v:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    if not Path(args.checkpoint).is_file():
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_USAGE
    try:
        model, extra = load_checkpoint(args.checkpoint)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    n = args.samples or cfg.train.eval_samples
    data = held_out_set(cfg.held_out, rng_streams(cfg.train.seed)[2], n)
    metrics = evaluate(model, cfg.held_out, data, cfg.train.eval_batch_size)
    print(f"checkpoint {args.checkpoint} ({extra.get('steps', '?')} steps), {n} held-out samples")
    for k, v in metrics.items():
        print(f"  {k} = {v:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    errors = verify.model_gradcheck(cfg.model, seed=cfg.train.seed, T=args.max_t)
    width = max(len(k) for k in errors)
    for name, err in errors.items():
        print(f"{name:<{width}}  {err:.3e}  {'ok' if err < args.threshold else 'FAIL'}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} (threshold {args.threshold:g})")
    return EXIT_OK if worst < args.threshold else EXIT_FAIL


def cmd_equivcheck(args) -> int:
    if args.trials < 1:
        print("equivcheck: --trials must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.max_t < 1 or args.max_d < 1:
        print("equivcheck: --max-t and --max-d must be positive", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed or 0
    worst, worst_seed = verify.run_equivalence(args.trials, seed, args.max_t, args.max_d)
    ok = True
    for name, err in worst.items():
        passed = err < args.threshold
        ok &= passed
        print(f"{name:<18} worst {err:.3e} at seed {worst_seed[name]}  {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xlstm-np", description="xLSTM in numpy: training and verification tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a TOML run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default runs/<config stem>)")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the config's held-out set")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--samples", type=int)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--threshold", type=float, default=1e-4)
    g.add_argument("--max-t", type=int, default=8)
    g.set_defaults(func=cmd_gradcheck)

    q = sub.add_parser("equivcheck", help="stabilized/plain and parallel/recurrent equivalence trials")
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--threshold", type=float, default=1e-8)
    q.add_argument("--max-t", type=int, default=64)
    q.add_argument("--max-d", type=int, default=32)
    q.set_defaults(func=cmd_equivcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
