"""One self-training data iteration: generate, validate, harvest, score, select, emit.

Fine-tuning itself happens outside: the manifest names the SFT file for an
external trainer, and the next iteration's config points at the updated endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

from gift.backend import Backend, build_backend
from gift.baselines import BaselineRun, run_rft, run_rft_rd
from gift.config import RunConfig, config_snapshot
from gift.gibbs import harvest_pool, run_chain, seed_rng
from gift.metrics import origin_pass_rates
from gift.prompts import TEXT_STOP, SummaryExamplePool, clean_text_completion, render_zero_shot_summarization_prompt
from gift.records import Candidate, ChainRecord, SeedTask, SftRecord, load_seed_dataset, write_records
from gift.sandbox import Sandbox
from gift.selection import (EmptyPoolError, PerplexityScorer, build_weighted_pool, emit_sft, select_k)

log = logging.getLogger(__name__)

METHODS = ("gift", "rft", "rft_rd")


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def make_run_id(config: RunConfig, iteration: int, method: str, seeds_digest: str) -> str:
    snap = config_snapshot(config)
    snap.pop("output_dir", None)
    blob = json.dumps([snap, iteration, method, seeds_digest], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Components:
    """Backends and sandbox for one run; built from the config unless injected."""

    def __init__(self, config: RunConfig, backend: Optional[Backend] = None,
                 scoring_backend: Optional[Backend] = None, sandbox: Optional[Sandbox] = None):
        self.backend = backend or build_backend(config.backend)
        if scoring_backend is not None:
            self.scoring_backend = scoring_backend
        elif config.scoring_backend is not None:
            self.scoring_backend = build_backend(config.scoring_backend)
        else:
            self.scoring_backend = self.backend
        self.sandbox = sandbox or Sandbox(config.sandbox, config.sandbox_concurrency)


class ProgressLog:
    """Append-only per-seed results so an interrupted run can resume.

    Owned by the thread that calls ``append``; lines are flushed one at a time.
    """

    def __init__(self, directory: Path, run_id: str):
        self.path = directory / "progress.jsonl"
        self.run_id = run_id
        self.done: dict[tuple[str, str], dict] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError:
                        break  # torn final line from an interrupted write
                    if entry.get("run_id") == run_id:
                        self.done[(entry["kind"], entry["seed_id"])] = entry["record"]
            if self.done:
                log.info("resuming run %s: %d seed results already logged", run_id, len(self.done))
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, kind: str, seed_id: str, record: dict) -> None:
        self._fh.write(json.dumps({"run_id": self.run_id, "kind": kind, "seed_id": seed_id, "record": record},
                                  sort_keys=True) + "\n")
        self._fh.flush()
        self.done[(kind, seed_id)] = record

    def close(self):
        self._fh.close()


def _baseline_to_dict(run: BaselineRun) -> dict:
    return {"seed_id": run.seed_id, "terminal_reason": run.terminal_reason, "error": run.error,
            "rewrites": run.rewrites, "candidates": [c.to_dict() for c in run.candidates]}


def _baseline_from_dict(d: dict) -> BaselineRun:
    return BaselineRun(d["seed_id"], [Candidate.from_dict(c) for c in d["candidates"]], d["terminal_reason"],
                       d.get("rewrites", []), d.get("error"))


def _generate(seeds: list[SeedTask], config: RunConfig, parts: Components, method: str,
              pool: Optional[SummaryExamplePool], iteration: int, progress: ProgressLog):
    jobs: list[tuple[str, SeedTask, Callable]] = []
    for task in seeds:
        if method == "gift":
            jobs.append(("chain", task, lambda t=task: run_chain(t, config, parts.backend, parts.sandbox, pool, iteration)))
        if method == "rft" or (method in ("gift", "rft_rd") and config.include_rft_pool):
            jobs.append(("rft", task, lambda t=task: run_rft(t, config, parts.backend, parts.sandbox)))
        if method == "rft_rd":
            jobs.append(("rft_rd", task, lambda t=task: run_rft_rd(t, config, parts.backend, parts.sandbox, pool)))
    pending = [(k, t, fn) for k, t, fn in jobs if (k, t.id) not in progress.done]
    with ThreadPoolExecutor(max_workers=config.chain_parallelism) as ex:
        futures = {ex.submit(fn): (kind, task) for kind, task, fn in pending}
        try:
            for fut in as_completed(futures):
                kind, task = futures[fut]
                result = fut.result()
                progress.append(kind, task.id, result.to_dict() if kind == "chain" else _baseline_to_dict(result))
        except BaseException:
            for f in futures:
                f.cancel()
            raise
    chains = {sid: ChainRecord.from_dict(r) for (k, sid), r in progress.done.items() if k == "chain"}
    runs: dict[str, dict[str, BaselineRun]] = {"rft": {}, "rft_rd": {}}
    for (k, sid), r in progress.done.items():
        if k in runs:
            runs[k][sid] = _baseline_from_dict(r)
    return chains, runs


def _select_seed(task: SeedTask, pool: list[Candidate], config: RunConfig, scorer: Optional[PerplexityScorer],
                 iteration: int):
    wp = build_weighted_pool(task, pool, scorer, config.T, uniform=config.selection == "uniform")
    selected = select_k(wp, config.K, seed_rng(config, task.id, iteration, "select"))
    records = emit_sft(task, selected, config.pairing_mode, seed_rng(config, task.id, iteration, "pairing"),
                       pool=wp.candidates, iteration=iteration, extra_descriptions=config.extra_descriptions)
    return wp, records


def select_all(seeds: list[SeedTask], pools: dict[str, list[Candidate]], config: RunConfig,
               scorer: Optional[PerplexityScorer], iteration: int):
    """Weighted selection for every seed; seeds with empty pools are excluded and reported."""
    results = {}
    excluded = []

    def work(task):
        return _select_seed(task, pools.get(task.id, []), config, scorer, iteration)

    with ThreadPoolExecutor(max_workers=config.chain_parallelism) as ex:
        futures = {task.id: ex.submit(work, task) for task in seeds}
        for task in seeds:
            try:
                results[task.id] = futures[task.id].result()
            except EmptyPoolError:
                log.warning("seed %s excluded: no passing code", task.id)
                excluded.append(task.id)
    return results, excluded


def run_iteration(config: RunConfig, iteration: int = 1, method: str = "gift",
                  parts: Optional[Components] = None) -> dict:
    """Execute one data iteration and return its manifest (also written to disk)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if iteration < 1:
        raise ValueError("iteration must be >= 1")
    if not config.seed_dataset:
        raise ValueError("config.seed_dataset is required")
    parts = parts or Components(config)
    parts.sandbox.check()
    parts.backend.health()
    if parts.scoring_backend is not parts.backend:
        parts.scoring_backend.health()

    seeds = load_seed_dataset(config.seed_dataset)
    needs_pool = method == "gift" or (method == "rft_rd" and config.rd_rewrites_from == "gibbs1")
    pool = SummaryExamplePool.load(config.summary_pool) if needs_pool else None
    if needs_pool and len(pool) == 0:
        raise ValueError("summary example pool is empty")

    out_dir = Path(config.output_dir) / method / f"iter{iteration}"
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = make_run_id(config, iteration, method, file_digest(Path(config.seed_dataset)))
    progress = ProgressLog(out_dir, run_id)
    try:
        chains, runs = _generate(seeds, config, parts, method, pool, iteration, progress)
    finally:
        progress.close()

    seed_ids = [t.id for t in seeds]
    rft_pool = {sid: r.candidates for sid, r in runs["rft"].items()}
    if method == "gift":
        harvested = harvest_pool([chains[s] for s in seed_ids if s in chains], config.include_rft_pool,
                                 rft_pool, seed_ids)
    else:
        main = rft_pool if method == "rft" else {sid: r.candidates for sid, r in runs["rft_rd"].items()}
        extra = rft_pool if method == "rft_rd" and config.include_rft_pool else {}
        merged = {sid: list(main.get(sid, [])) + list(extra.get(sid, [])) for sid in seed_ids}
        harvested = harvest_pool([], True, merged, seed_ids)

    scorer = None if config.selection == "uniform" else PerplexityScorer(parts.scoring_backend)
    pools = {sid: p.candidates for sid, p in harvested.items()}
    selected, excluded = select_all(seeds, pools, config, scorer, iteration)

    sft: list[SftRecord] = [rec for sid in seed_ids if sid in selected for rec in selected[sid][1]]
    scored = {(sid, e.candidate.code): e.candidate for sid, (wp, _) in selected.items() for e in wp.entries}

    all_candidates: dict[str, list[Candidate]] = {sid: [] for sid in seed_ids}
    for sid in seed_ids:
        if sid in chains:
            all_candidates[sid].extend(chains[sid].candidates())
        for kind in ("rft", "rft_rd"):
            if sid in runs[kind]:
                all_candidates[sid].extend(runs[kind][sid].candidates)
    flat = []
    for sid in seed_ids:
        for c in all_candidates[sid]:
            s = scored.get((sid, c.code)) if c.passed else None
            if s is not None and s.perplexity is not None:
                c = replace(c, token_logprobs=s.token_logprobs, perplexity=s.perplexity)
            flat.append(c)

    outputs = {}
    if method == "gift":
        write_records(out_dir / "chains.jsonl", [chains[s] for s in seed_ids if s in chains])
        outputs["chains"] = "chains.jsonl"
    write_records(out_dir / "candidates.jsonl", flat)
    outputs["candidates"] = "candidates.jsonl"
    write_records(out_dir / "sft.jsonl", sft)
    outputs["sft"] = "sft.jsonl"
    digests = {name: file_digest(out_dir / fname) for name, fname in outputs.items()}

    per_seed = {}
    for sid in seed_ids:
        entry = {
            "generated": sum(1 for c in all_candidates[sid]),
            "passing": len(pools.get(sid, [])),
            "duplicates": len(harvested[sid].duplicates) if sid in harvested else 0,
            "sft_records": len(selected[sid][1]) if sid in selected else 0,
        }
        if sid in chains:
            entry["chain_terminal_reason"] = chains[sid].terminal_reason
            entry["chain_generated"] = len(chains[sid].candidates())
        for kind in ("rft", "rft_rd"):
            if sid in runs[kind]:
                entry[f"{kind}_terminal_reason"] = runs[kind][sid].terminal_reason
                entry[f"{kind}_generated"] = len(runs[kind][sid].candidates)
        per_seed[sid] = entry

    flat_all = [c for sid in seed_ids for c in all_candidates[sid]]
    manifest = {
        "run_id": run_id,
        "method": method,
        "iteration": iteration,
        "config": config_snapshot(config),
        "seed_dataset_sha256": file_digest(Path(config.seed_dataset)),
        "seeds": per_seed,
        "excluded_seeds": excluded,
        "pass_rates": origin_pass_rates(flat_all) if flat_all else {},
        "sft_records": len(sft),
        "sft_file": str(out_dir / "sft.jsonl"),
        "outputs": {name: {"path": fname, "sha256": digests[name]} for name, fname in outputs.items()},
        "digest": hashlib.sha256(json.dumps(digests, sort_keys=True).encode()).hexdigest(),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


def bootstrap_summary_pool(seeds: list[SeedTask], config: RunConfig, parts: Components,
                           max_words: int = 60, limit: Optional[int] = None) -> SummaryExamplePool:
    """Zero-shot summaries of dataset codes, filtered for empty, echoed-code or overlong answers."""
    from gift.gibbs import generate_candidates
    from gift.prompts import SummaryExample

    examples = []
    for task in seeds:
        if limit is not None and len(examples) >= limit:
            break
        code = task.reference_code
        if code is None:
            cands = generate_candidates(task, task.description, config.per_step_width, config, parts.backend,
                                        parts.sandbox, "rft", 0)
            passing = [c for c in cands if c.passed]
            if not passing:
                continue
            code = passing[0].code
        comp = parts.backend.complete(render_zero_shot_summarization_prompt(code), n=1,
                                      temperature=config.generation_temperature, max_tokens=config.max_tokens,
                                      stop=TEXT_STOP)[0]
        text = clean_text_completion(comp.text)
        if usable_summary(text, max_words):
            examples.append(SummaryExample(code=code, description=text))
        else:
            log.info("bootstrap: dropped summary for %s: %r", task.id, text[:80])
    return SummaryExamplePool(examples)


def usable_summary(text: str, max_words: int = 60) -> bool:
    words = text.split()
    if not words or len(words) > max_words:
        return False
    if sum(any(ch.isalpha() for ch in w) for w in words) < 3:
        return False
    return not any(marker in text for marker in ("def ", "return ", "###", "```"))
