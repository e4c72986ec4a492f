"""Train the synthetic-task configs and compare the final metric with its target.

    python scripts/reproduce.py                 # parity, mqar and nns in turn
    python scripts/reproduce.py parity --seed 3 --out runs/
"""
import argparse
import sys
import time
from pathlib import Path

from xlstm_np.config import load_run_config
from xlstm_np.experiment import evaluate, held_out_set, train
from xlstm_np.numerics import make_rng

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
# metric name, comparison, threshold
TARGETS = {
    "parity": ("eval_scaled_accuracy", ">=", 0.95),
    "mqar": ("eval_accuracy", ">=", 0.99),
    "nns": ("eval_mse", "<=", 0.02),
}


def run(name: str, seed: int | None, out_root: Path, eval_samples: int) -> bool:
    cfg = load_run_config(CONFIGS / f"{name}.toml")
    if seed is not None:
        cfg = cfg.with_seed(seed)
    start = time.perf_counter()
    result = train(cfg, out_root / name,
                   log=lambda r: print(f"  [{name}] step {r.step} train {r.train_loss:.4f} eval {r.eval_loss:.4f}",
                                       flush=True))
    minutes = (time.perf_counter() - start) / 60
    data = held_out_set(cfg.held_out, make_rng(10_000 + cfg.train.seed), eval_samples)
    final = evaluate(result.model, cfg.held_out, data, cfg.train.eval_batch_size)
    metric, op, threshold = TARGETS[name]
    value = final[metric]
    ok = value >= threshold if op == ">=" else value <= threshold
    print(f"{name}: {metric} {value:.4f} ({op} {threshold}) after {result.steps_run} steps, "
          f"{minutes:.1f} min -> {'PASS' if ok else 'FAIL'}")
    return ok


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("tasks", nargs="*", help=f"any of {', '.join(TARGETS)} (default: all)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--eval-samples", type=int, default=2048)
    args = ap.parse_args()
    unknown = set(args.tasks) - set(TARGETS)
    if unknown:
        ap.error(f"unknown task(s): {', '.join(sorted(unknown))}")
    results = [run(t, args.seed, Path(args.out), args.eval_samples) for t in args.tasks or TARGETS]
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
