"""Desk-scale comparison of pruning modes on TinyConvNet / synthetic data.

Runs each (mode, rate) pair over several seeds and prints final and
last-10-epoch test accuracy. Use --out to keep the per-run metrics CSVs.

    python scripts/desk_ablation.py --seeds 4 --t-max 40
    PRUNEKIT_THREADS=4 python scripts/desk_ablation.py --workers 4
"""
import argparse
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from prunekit.config import RunConfig
from prunekit.pruning import ScheduleConfig
from prunekit.trainer import max_workers, run_ghfp

SETTINGS = [("GHFP", 0.0), ("GHFP", 0.4), ("SoftAndHard", 0.4), ("ASFP", 0.4),
            ("HFP", 0.4), ("ASFP", 0.8), ("GHFP", 0.8)]


def one(job):
    mode, rate, seed, t_max, out = job
    cfg = RunConfig(schedule=ScheduleConfig.for_mode(mode, rate, t_max=t_max), seed=seed)
    if out:
        cfg = cfg.replace(metrics_path=str(Path(out) / f"{mode}_{rate}_seed{seed}.csv"))
    accs = [m.test_acc for m in run_ghfp(cfg).metrics]
    return mode, rate, seed, accs[-1], statistics.fmean(accs[-10:])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--t-max", type=int, default=40)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", help="directory for metrics CSVs")
    args = ap.parse_args()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    jobs = [(m, r, s, args.t_max, args.out) for m, r in SETTINGS for s in range(args.seeds)]
    workers = args.workers or max_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    print(f"{'mode':<12} {'rate':>4}  " + "  ".join(f"seed{s}" for s in range(args.seeds))
          + "   mean  last10")
    for mode, rate in SETTINGS:
        rows = [r for r in results if r[:2] == (mode, rate)]
        finals = "  ".join(f"{r[3]:.3f}" for r in rows)
        print(f"{mode:<12} {rate:>4.1f}  {finals}  {statistics.fmean(r[3] for r in rows):.3f}"
              f"  {statistics.fmean(r[4] for r in rows):.3f}")


if __name__ == "__main__":
    main()
