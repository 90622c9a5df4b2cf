"""Per-origin pass rates under the mock backend.

Runs RFT+RD (seed vs. rewritten descriptions) and GiFT chains over the
fixture seeds and prints the pass rate of each candidate origin. The mock's
pass probabilities are set from the command line; the defaults are the MBPP+ rates:

    python3 scripts/origin_pass_rates.py --p-seed 0.5371 --p-rewrite 0.246 --p-summary 0.2407
"""

import argparse
from pathlib import Path

from gift.baselines import run_rft_rd
from gift.config import RunConfig
from gift.gibbs import run_chain
from gift.metrics import origin_pass_rates
from gift.mock import MockBackend, load_book
from gift.prompts import SummaryExamplePool
from gift.records import load_seed_dataset
from gift.sandbox import Sandbox, SandboxLimits

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default=str(FIXTURES / "seeds.jsonl"))
    ap.add_argument("--book", default=str(FIXTURES / "mock_model.jsonl"))
    ap.add_argument("--pool", default=str(FIXTURES / "summary_pool.jsonl"))
    ap.add_argument("--p-seed", type=float, default=0.5371)
    ap.add_argument("--p-rewrite", type=float, default=0.246)
    ap.add_argument("--p-summary", type=float, default=0.2407)
    ap.add_argument("--mock-seed", type=int, default=9)
    args = ap.parse_args()

    backend = MockBackend(seed=args.mock_seed, book=load_book(args.book),
                          pass_prob={"seed": args.p_seed, "rewrite": args.p_rewrite, "summary": args.p_summary})
    sandbox = Sandbox(SandboxLimits(wall_timeout_ms=5000), max_concurrency=2)
    cfg = RunConfig()
    pool = SummaryExamplePool.load(args.pool)
    cands = []
    for task in load_seed_dataset(args.seeds):
        cands.extend(run_rft_rd(task, cfg, backend, sandbox).candidates)
        cands.extend(run_chain(task, cfg, backend, sandbox, pool).candidates())
    counts = {}
    for c in cands:
        counts[c.origin] = counts.get(c.origin, 0) + 1
    print(f"{'origin':<16}{'n':>6}{'pass rate':>12}")
    for origin, rate in origin_pass_rates(cands).items():
        print(f"{origin:<16}{counts[origin]:>6}{100 * rate:>11.2f}%")


if __name__ == "__main__":
    main()
