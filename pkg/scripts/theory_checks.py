"""Run the discrete-distribution checks and print timings.

    python3 scripts/theory_checks.py --trials 1000 --gibbs-trials 50
"""

import argparse
import time

from gift.theory import check_gibbs, check_loss_identity, check_variance


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--gibbs-trials", type=int, default=50)
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    runs = [
        ("loss", lambda: check_loss_identity(args.trials, args.seed)),
        ("variance", lambda: check_variance(args.trials, args.seed)),
        ("gibbs", lambda: check_gibbs(args.gibbs_trials, args.seed, steps=args.steps)),
    ]
    failed = 0
    for name, fn in runs:
        t0 = time.perf_counter()
        res = fn()
        failed += not res.passed
        print(f"{name:<9} {'PASS' if res.passed else 'FAIL'}  {time.perf_counter() - t0:6.2f}s  {res.detail}")
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
