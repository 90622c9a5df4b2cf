"""Command line entry point: ``gift <subcommand>``.

Exit codes: 0 ok, 1 usage/config, 2 backend, 3 sandbox environment,
4 internal-consistency failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

from gift.backend import Backend, BackendError
from gift.config import ConfigError, RunConfig, validate_config
from gift.records import Candidate, DatasetError, load_seed_dataset, read_records, write_records
from gift.sandbox import SandboxEnvironmentError
from gift.theory import CHECKS, InternalConsistencyError

log = logging.getLogger("gift")

EXIT_OK, EXIT_USAGE, EXIT_BACKEND, EXIT_SANDBOX, EXIT_INTERNAL = 0, 1, 2, 3, 4


def _emit(records: Sequence[dict], out: Optional[str]) -> None:
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if out:
        Path(out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)


def _load_config(args) -> RunConfig:
    cfg = validate_config(args.config)
    for name in ("seed_dataset", "output_dir"):
        override = getattr(args, name, None)
        if override:
            setattr(cfg, name, override)
    return cfg


def cmd_run(args, method: str) -> int:
    from gift.pipeline import run_iteration

    cfg = _load_config(args)
    if getattr(args, "rewrites_from", None):
        cfg.rd_rewrites_from = args.rewrites_from
    manifest = run_iteration(cfg, iteration=args.iteration, method=method)
    print(json.dumps({k: manifest[k] for k in ("run_id", "method", "iteration", "sft_records", "sft_file",
                                               "excluded_seeds", "digest")}, indent=2))
    return EXIT_OK


def _group(cands: list[Candidate]) -> dict[str, list[Candidate]]:
    groups: dict[str, list[Candidate]] = defaultdict(list)
    for c in cands:
        groups[c.seed_id].append(c)
    return groups


def cmd_select(args) -> int:
    from gift.backend import build_backend
    from gift.gibbs import harvest_pool
    from gift.pipeline import select_all
    from gift.selection import PerplexityScorer

    cfg = _load_config(args) if args.config else RunConfig()
    if args.K is not None:
        cfg.K = args.K
    if args.T is not None:
        cfg.T = args.T
    if args.mode:
        cfg.pairing_mode = args.mode
    if args.seed is not None:
        cfg.random_seed = args.seed
    if cfg.K < 1 or cfg.T == 0:
        raise ConfigError(["K must be ≥ 1 and T nonzero"])
    seeds_path = args.seeds or cfg.seed_dataset
    if not seeds_path:
        raise ConfigError(["--seeds (or seed_dataset in --config) is required"])
    seeds = load_seed_dataset(seeds_path)
    cands = read_records(args.pool, Candidate)
    harvested = harvest_pool([], True, _group(cands), [t.id for t in seeds])
    if cfg.selection == "uniform":
        scorer = None
    else:
        backend = build_backend(cfg.scoring_backend or cfg.backend) if args.config else Backend()
        scorer = PerplexityScorer(backend)
    results, excluded = select_all(seeds, {s: p.candidates for s, p in harvested.items()}, cfg, scorer,
                                   args.iteration)
    records = [r for t in seeds if t.id in results for r in results[t.id][1]]
    n = write_records(args.out, records)
    print(json.dumps({"sft_records": n, "excluded_seeds": excluded, "out": args.out}))
    return EXIT_OK


def cmd_metrics(args) -> int:
    from gift import metrics
    from gift.selection import weighted_pool

    if args.metric == "pass1":
        from gift.pipeline import Components

        cfg = validate_config(args.config)
        parts = Components(cfg)
        parts.sandbox.check()
        tasks = load_seed_dataset(args.eval)
        value = metrics.pass_at_1(tasks, parts.backend, parts.sandbox, args.samples,
                                  cfg.generation_temperature, cfg.max_tokens)
        _emit([{"metric": "pass@1", "value": value, "tasks": len(tasks), "samples_per_task": args.samples}], args.out)
        return EXIT_OK

    cands = read_records(args.pool, Candidate)
    if args.metric == "origin-rates":
        rates = metrics.origin_pass_rates(cands)
        counts = defaultdict(int)
        for c in cands:
            counts[c.origin] += 1
        _emit([{"metric": "pass_rate", "origin": o, "value": v, "n": counts[o]} for o, v in rates.items()], args.out)
        return EXIT_OK

    groups = _group([c for c in cands if c.passed])
    rows = []
    if args.metric == "bleu":
        for sid, group in groups.items():
            if len(group) < 2:
                continue
            s = metrics.pairwise_bleu([c.code for c in group])
            rows.append({"metric": "pairwise_bleu", "seed_id": sid, "n": len(group),
                         **{k: v for k, v in s.to_dict().items() if k != "per_code"}})
    elif args.metric == "ppl-hist":
        bins = [float(b) for b in args.bins.split(",")]
        everything = []
        for sid, group in groups.items():
            scored = [c for c in group if c.perplexity is not None]
            if not scored:
                continue
            pool = weighted_pool(sid, scored, [c.perplexity for c in scored], args.T)
            everything.extend(e.ppl for e in pool.entries)
            rows.append({"metric": "ppl_histogram", "seed_id": sid, **metrics.ppl_histogram(pool, bins).to_dict()})
        if everything:
            rows.append({"metric": "ppl_histogram", "seed_id": None, **metrics.histogram(everything, bins).to_dict()})
    _emit(rows, args.out)
    return EXIT_OK


def cmd_theory(args) -> int:
    names = list(CHECKS) if args.check == "all" else [args.check]
    failed = False
    for name in names:
        trials = args.trials if args.trials is not None else (50 if name == "gibbs" else 1000)
        result = CHECKS[name](trials, args.seed)
        print(f"[{'PASS' if result.passed else 'FAIL'}] {result.name}: {result.detail}")
        failed |= not result.passed
    return EXIT_INTERNAL if failed else EXIT_OK


def cmd_pool_bootstrap(args) -> int:
    from gift.pipeline import Components, bootstrap_summary_pool

    cfg = _load_config(args)
    parts = Components(cfg)
    parts.sandbox.check()
    parts.backend.health()
    seeds = load_seed_dataset(cfg.seed_dataset)
    pool = bootstrap_summary_pool(seeds, cfg, parts, max_words=args.max_words, limit=args.limit)
    n = pool.dump(args.out)
    print(json.dumps({"examples": n, "out": args.out}))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = validate_config(args.config)
    print(json.dumps(cfg.to_dict(), indent=2, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gift", description="Gibbs-chain self-training data synthesis for code generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_like(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True)
        sp.add_argument("--iteration", type=int, default=1)
        sp.add_argument("--seed-dataset", dest="seed_dataset")
        sp.add_argument("--output-dir", dest="output_dir")
        return sp

    run_like("run", "Gibbs chains + perplexity-weighted selection for one iteration")
    run_like("rft", "rejection-sampling baseline")
    rd = run_like("rft-rd", "rejection sampling over seed + rewritten descriptions")
    rd.add_argument("--rewrites-from", dest="rewrites_from", choices=("prompt", "gibbs1"))

    sel = sub.add_parser("select", help="select K codes per seed from a candidate pool file")
    sel.add_argument("--pool", required=True)
    sel.add_argument("--seeds")
    sel.add_argument("--config")
    sel.add_argument("--K", type=int)
    sel.add_argument("--T", type=float)
    sel.add_argument("--mode", choices=("seed_only", "one_pair", "mix_pair"))
    sel.add_argument("--seed", type=int)
    sel.add_argument("--iteration", type=int, default=1)
    sel.add_argument("--out", required=True)

    met = sub.add_parser("metrics", help="analysis statistics")
    msub = met.add_subparsers(dest="metric", required=True)
    m1 = msub.add_parser("pass1")
    m1.add_argument("--config", required=True)
    m1.add_argument("--eval", required=True)
    m1.add_argument("--samples", type=int, default=1)
    for name in ("bleu", "ppl-hist", "origin-rates"):
        m = msub.add_parser(name)
        m.add_argument("--pool", required=True)
        if name == "ppl-hist":
            m.add_argument("--bins", default="1,1.5,2,3,5,10,100")
            m.add_argument("--T", type=float, default=2.0)
    for m in msub.choices.values():
        m.add_argument("--out")

    th = sub.add_parser("theory", help="verify the discrete-distribution identities")
    th.add_argument("--check", choices=("all", "gibbs", "variance", "loss"), default="all")
    th.add_argument("--trials", type=int)
    th.add_argument("--seed", type=int, default=0)

    pool = sub.add_parser("pool", help="summarization example pool")
    psub = pool.add_subparsers(dest="pool_command", required=True)
    boot = psub.add_parser("bootstrap")
    boot.add_argument("--config", required=True)
    boot.add_argument("--seed-dataset", dest="seed_dataset")
    boot.add_argument("--out", required=True)
    boot.add_argument("--max-words", type=int, default=60)
    boot.add_argument("--limit", type=int)

    val = sub.add_parser("validate", help="check a config file and print it with defaults filled in")
    val.add_argument("config")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    dispatch = {
        "run": lambda: cmd_run(args, "gift"),
        "rft": lambda: cmd_run(args, "rft"),
        "rft-rd": lambda: cmd_run(args, "rft_rd"),
        "select": lambda: cmd_select(args),
        "metrics": lambda: cmd_metrics(args),
        "theory": lambda: cmd_theory(args),
        "pool": lambda: cmd_pool_bootstrap(args),
        "validate": lambda: cmd_validate(args),
    }
    try:
        return dispatch[args.command]()
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except BackendError as e:
        log.error("backend: %s", e)
        return EXIT_BACKEND
    except SandboxEnvironmentError as e:
        log.error("sandbox: %s", e)
        return EXIT_SANDBOX
    except InternalConsistencyError as e:
        log.error("internal consistency: %s", e)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        log.error("interrupted; per-seed progress was flushed and the run can be resumed")
        return 130


if __name__ == "__main__":
    sys.exit(main())
