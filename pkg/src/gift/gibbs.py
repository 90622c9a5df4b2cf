"""Per-seed description/code translation chains and pool harvesting."""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from gift.backend import Backend, BackendError
from gift.config import RunConfig
from gift.prompts import (CODEGEN_STOP, TEXT_STOP, SummaryExamplePool, assemble_code, clean_text_completion,
                          render_codegen_prompt, render_summarization_prompt)
from gift.records import Candidate, ChainRecord, RoundRecord, SeedTask
from gift.sandbox import Sandbox

log = logging.getLogger(__name__)


def seed_rng(config: RunConfig, task_id: str, iteration: int, purpose: str) -> random.Random:
    """Independent stream per (run seed, task, iteration, purpose); scheduling order cannot leak in."""
    return random.Random(f"{config.random_seed}:{task_id}:{iteration}:{purpose}")


def generate_candidates(task: SeedTask, description: str, n: int, config: RunConfig, backend: Backend,
                        sandbox: Sandbox, origin: str, round_: int) -> list[Candidate]:
    prompt = render_codegen_prompt(description, task)
    completions = backend.complete(prompt, n=n, temperature=config.generation_temperature,
                                   max_tokens=config.max_tokens, want_logprobs=True, stop=CODEGEN_STOP)
    out = []
    for comp in completions:
        code = assemble_code(task, comp.text)
        out.append(Candidate(code=code, seed_id=task.id, source_description=description, round=round_,
                             origin=origin, pass_report=sandbox.run(code, task),
                             generation_logprobs=comp.token_logprobs))
    return out


def summarize(code: str, pool: SummaryExamplePool, rng: random.Random, config: RunConfig, backend: Backend) -> str:
    prompt = render_summarization_prompt(code, pool, rng)
    comp = backend.complete(prompt, n=1, temperature=config.generation_temperature,
                            max_tokens=config.max_tokens, stop=TEXT_STOP)[0]
    return clean_text_completion(comp.text)


def run_chain(task: SeedTask, config: RunConfig, backend: Backend, sandbox: Sandbox,
              pool: SummaryExamplePool, iteration: int = 1) -> ChainRecord:
    """Alternate code generation and summarization for ``config.n_rounds`` rounds.

    Each round samples ``per_step_width`` codes from the current description
    and keeps the first passing one. The code handed to summarization is that
    chosen code, else the code summarized in the previous round, else (round 1
    with no passing code) the first generated candidate. Failing candidates are
    recorded but never become pool members.
    """
    if len(pool) == 0:
        raise ValueError("summary example pool is empty")
    rng = seed_rng(config, task.id, iteration, "summary-examples")
    rounds: list[RoundRecord] = []
    description = task.description
    last_summarized: Optional[str] = None
    for k in range(1, config.n_rounds + 1):
        try:
            cands = generate_candidates(task, description, config.per_step_width, config, backend, sandbox,
                                        "gift", k - 1)
        except BackendError as e:
            log.error("chain %s: backend failure in round %d generation: %s", task.id, k, e)
            return ChainRecord(task.id, rounds, "backend_error", iteration, error=str(e))

        chosen = next((i for i, c in enumerate(cands) if c.passed), None)
        if chosen is not None:
            source, src_kind = cands[chosen].code, "chosen"
        elif last_summarized is not None:
            source, src_kind = last_summarized, "previous"
        else:
            source, src_kind = cands[0].code, "failing"
            log.info("chain %s: round 1 produced no passing code, summarizing a failing candidate", task.id)

        try:
            summary = summarize(source, pool, rng, config, backend)
        except BackendError as e:
            log.error("chain %s: backend failure in round %d summarization: %s", task.id, k, e)
            rounds.append(RoundRecord(k, description, cands, chosen))
            return ChainRecord(task.id, rounds, "backend_error", iteration, error=str(e))

        rounds.append(RoundRecord(k, description, cands, chosen, summary or None, source, src_kind))
        last_summarized = source
        if summary:
            description = summary
        else:
            log.warning("chain %s: empty summary in round %d, reusing the previous description", task.id, k)
    return ChainRecord(task.id, rounds, "completed", iteration)


_WS_RE = re.compile(r"[ \t]+$", re.MULTILINE)


def normalize_code(code: str) -> str:
    text = _WS_RE.sub("", code.replace("\r\n", "\n"))
    return "\n".join(line for line in text.split("\n") if line.strip())


@dataclass
class SeedPool:
    seed_id: str
    candidates: list[Candidate] = field(default_factory=list)
    duplicates: list[int] = field(default_factory=list)  # indices repeating an earlier normalized code

    @property
    def excluded(self) -> bool:
        return not self.candidates


def harvest_pool(chains: Iterable[ChainRecord], include_rft_pool: bool = False,
                 rft_candidates: Optional[Mapping[str, Sequence[Candidate]]] = None,
                 seed_ids: Optional[Sequence[str]] = None) -> dict[str, SeedPool]:
    """Passing candidates per seed; duplicates are kept (their multiplicity is signal) but flagged."""
    pools: dict[str, SeedPool] = {sid: SeedPool(sid) for sid in (seed_ids or ())}
    for chain in chains:
        pools.setdefault(chain.seed_id, SeedPool(chain.seed_id)).candidates.extend(
            c for c in chain.candidates() if c.passed)
    if include_rft_pool and rft_candidates:
        for sid, cands in rft_candidates.items():
            pools.setdefault(sid, SeedPool(sid)).candidates.extend(c for c in cands if c.passed)
    for pool in pools.values():
        seen = set()
        for i, c in enumerate(pool.candidates):
            key = normalize_code(c.code)
            if key in seen:
                pool.duplicates.append(i)
            seen.add(key)
        if pool.excluded:
            log.warning("seed %s has no passing code and is excluded from selection", pool.seed_id)
    return pools
