"""Rejection-sampling baselines under the same generation budget as a Gibbs chain."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from gift.backend import Backend, BackendError
from gift.config import RunConfig
from gift.gibbs import generate_candidates, seed_rng, summarize
from gift.prompts import TEXT_STOP, SummaryExamplePool, clean_text_completion, render_rewrite_prompt
from gift.records import Candidate, SeedTask
from gift.sandbox import Sandbox

log = logging.getLogger(__name__)


@dataclass
class BaselineRun:
    seed_id: str
    candidates: list[Candidate] = field(default_factory=list)
    terminal_reason: str = "completed"
    rewrites: list[str] = field(default_factory=list)
    error: Optional[str] = None


def generation_budget(config: RunConfig) -> int:
    return config.n_rounds * config.per_step_width


def run_rft(task: SeedTask, config: RunConfig, backend: Backend, sandbox: Sandbox) -> BaselineRun:
    run = BaselineRun(task.id)
    try:
        run.candidates = generate_candidates(task, task.description, generation_budget(config), config,
                                             backend, sandbox, "rft", 0)
    except BackendError as e:
        log.error("rft %s: backend failure: %s", task.id, e)
        run.terminal_reason, run.error = "budget_exhausted", str(e)
    return run


def _prompt_rewrites(task: SeedTask, config: RunConfig, backend: Backend) -> list[str]:
    comps = backend.complete(render_rewrite_prompt(task.description), n=config.rd_rewrites,
                             temperature=config.generation_temperature, max_tokens=config.max_tokens,
                             stop=TEXT_STOP)
    rewrites = []
    for comp in comps:
        text = clean_text_completion(comp.text)
        if not text:
            log.warning("rft-rd %s: empty rewrite, falling back to the seed description", task.id)
            text = task.description
        rewrites.append(text)
    return rewrites


def _gibbs1_rewrites(task: SeedTask, seed_codes: list[Candidate], config: RunConfig, backend: Backend,
                     pool: SummaryExamplePool) -> list[str]:
    """One summarization step from the seed's own codes, used in place of prompted rewrites."""
    sources = [c for c in seed_codes if c.passed] or seed_codes
    rng = seed_rng(config, task.id, 0, "gibbs1-rewrites")
    rewrites = []
    for j in range(config.rd_rewrites):
        text = summarize(sources[j % len(sources)].code, pool, rng, config, backend)
        rewrites.append(text or task.description)
    return rewrites


def run_rft_rd(task: SeedTask, config: RunConfig, backend: Backend, sandbox: Sandbox,
               pool: Optional[SummaryExamplePool] = None) -> BaselineRun:
    """RFT over the seed description plus ``rd_rewrites`` alternative descriptions.

    With the default budget this is 10 codes from the seed and 10 from each of
    5 rewrites. ``rd_rewrites_from="gibbs1"`` takes the rewrites from one
    summarization step over the seed's codes instead of the rewrite prompt.
    """
    run = BaselineRun(task.id)
    per_desc = config.rd_codes_per_description
    try:
        seed_codes = generate_candidates(task, task.description, per_desc, config, backend, sandbox,
                                         "rft_rd_seed", 0)
        run.candidates.extend(seed_codes)
        if config.rd_rewrites_from == "gibbs1":
            if pool is None or len(pool) == 0:
                raise ValueError("gibbs1 rewrites need a summary example pool")
            run.rewrites = _gibbs1_rewrites(task, seed_codes, config, backend, pool)
        else:
            run.rewrites = _prompt_rewrites(task, config, backend)
        for rewrite in run.rewrites:
            run.candidates.extend(generate_candidates(task, rewrite, per_desc, config, backend, sandbox,
                                                      "rft_rd_rewrite", 0))
    except BackendError as e:
        log.error("rft-rd %s: backend failure: %s", task.id, e)
        run.terminal_reason, run.error = "budget_exhausted", str(e)
    return run
