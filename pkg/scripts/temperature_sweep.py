"""Effect of the selection temperature T on what gets selected.

Takes the candidates file from a finished `gift run`, scores every passing
code under its seed description, and for each T reports the mean perplexity
and the pairwise BLEU of the K selected codes (averaged over seeds and
repeats). Negative T prefers low-perplexity codes, positive T the tail.

    python3 scripts/temperature_sweep.py --config configs/mock.yaml \\
        --pool runs/mock/gift/iter1/candidates.jsonl
"""

import argparse
import random
import statistics
from collections import defaultdict

from gift.backend import build_backend
from gift.config import validate_config
from gift.metrics import pairwise_bleu
from gift.records import Candidate, load_seed_dataset, read_records
from gift.selection import PerplexityScorer, build_weighted_pool, select_k


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", required=True)
    ap.add_argument("--pool", required=True)
    ap.add_argument("--temps", default="-2,-1,1,2,5")
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--K", type=int, default=8)
    args = ap.parse_args()

    cfg = validate_config(args.config)
    seeds = {t.id: t for t in load_seed_dataset(cfg.seed_dataset)}
    scorer = PerplexityScorer(build_backend(cfg.scoring_backend or cfg.backend))
    by_seed = defaultdict(list)
    for c in read_records(args.pool, Candidate):
        if c.passed and c.seed_id in seeds:
            by_seed[c.seed_id].append(c)

    settings = [(f"T={t}", float(t), False) for t in args.temps.split(",")] + [("uniform", 1.0, True)]
    print(f"{'setting':<10}{'mean ppl':>10}{'BLEU':>8}")
    for label, T, uniform in settings:
        rng = random.Random(0)
        ppls, bleus = [], []
        for sid, cands in sorted(by_seed.items()):
            pool = build_weighted_pool(seeds[sid], cands, scorer, T, uniform=uniform)
            ppl_of = {e.candidate.code: e.ppl for e in pool.entries}
            for _ in range(args.repeats):
                picked = select_k(pool, args.K, rng)
                ppls.append(statistics.fmean(ppl_of[c.code] for c in picked))
                bleus.append(pairwise_bleu([c.code for c in picked]).mean)
        print(f"{label:<10}{statistics.fmean(ppls):>10.3f}{statistics.fmean(bleus):>8.3f}")


if __name__ == "__main__":
    main()
