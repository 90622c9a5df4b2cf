"""Perplexity-weighted selection of K codes per seed and SFT record emission."""

from __future__ import annotations

import logging
import math
import random
import statistics
import threading
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from gift.backend import Backend, CapabilityError
from gift.prompts import completion_body, render_codegen_prompt
from gift.records import Candidate, SeedTask, SftRecord, perplexity_of

log = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9


class EmptyPoolError(ValueError):
    """A seed has no passing code; it is dropped from this iteration's SFT data."""


def perplexity(token_logprobs: Sequence[float]) -> float:
    """exp of the negative mean token logprob."""
    return perplexity_of(token_logprobs)


def softmax_weights(ppls: Sequence[float], T: float) -> list[float]:
    """Normalized exp(ppl / T). Positive T favours high perplexity (the tail), negative T the head."""
    if T == 0:
        raise ValueError("T must be nonzero")
    if not ppls:
        raise ValueError("ppls must be nonempty")
    z = [p / T for p in ppls]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = math.fsum(e)
    return [v / s for v in e]


class PerplexityScorer:
    """Scores candidates against the seed's codegen prompt, caching by (seed, code)."""

    def __init__(self, backend: Backend):
        self.backend = backend
        self._cache: dict[tuple[str, str], tuple[float, ...]] = {}
        self._lock = threading.Lock()
        self.calls = 0

    def logprobs(self, candidate: Candidate, seed: SeedTask) -> tuple[float, ...]:
        key = (seed.id, candidate.code)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        context = render_codegen_prompt(seed.description, seed)
        lps = tuple(self.backend.score(context, completion_body(seed, candidate.code)))
        with self._lock:
            self.calls += 1
            self._cache.setdefault(key, lps)
        return lps

    def scored(self, candidate: Candidate, seed: SeedTask) -> Candidate:
        lps = self.logprobs(candidate, seed)
        return replace(candidate, token_logprobs=lps, perplexity=perplexity(lps))


def conditioned_perplexity(candidate: Candidate, seed: SeedTask, backend: Backend,
                           scorer: Optional[PerplexityScorer] = None) -> float:
    if not candidate.passed:
        raise ValueError("only passing candidates are scored")
    scorer = scorer or PerplexityScorer(backend)
    return perplexity(scorer.logprobs(candidate, seed))


@dataclass(frozen=True)
class PoolEntry:
    candidate: Candidate
    ppl: float
    weight: float
    scored: bool = True


@dataclass(frozen=True)
class WeightedPool:
    seed_id: str
    entries: tuple[PoolEntry, ...]
    temperature_T: float

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.temperature_T == 0:
            raise ValueError("T must be nonzero")
        if self.entries:
            total = math.fsum(e.weight for e in self.entries)
            if abs(total - 1.0) > WEIGHT_TOLERANCE:
                raise ValueError(f"weights sum to {total}, not 1")
        for e in self.entries:
            if not e.candidate.passed:
                raise ValueError("weighted pools only hold passing candidates")
            if not (e.ppl > 0 and 0 <= e.weight <= 1):
                raise ValueError("entry ppl must be > 0 and weight in [0, 1]")

    def __len__(self):
        return len(self.entries)

    @property
    def weights(self) -> list[float]:
        return [e.weight for e in self.entries]

    @property
    def candidates(self) -> list[Candidate]:
        return [e.candidate for e in self.entries]


def weighted_pool(seed_id: str, candidates: Sequence[Candidate], ppls: Sequence[float], T: float,
                  scored: Optional[Sequence[bool]] = None, uniform: bool = False) -> WeightedPool:
    if uniform:
        weights = [1.0 / len(candidates)] * len(candidates) if candidates else []
    else:
        weights = softmax_weights(ppls, T) if candidates else []
    scored = scored or [True] * len(candidates)
    entries = [PoolEntry(c, p, w, s) for c, p, w, s in zip(candidates, ppls, weights, scored)]
    return WeightedPool(seed_id, entries, T)


def build_weighted_pool(seed: SeedTask, candidates: Sequence[Candidate], scorer: Optional[PerplexityScorer],
                        T: float, uniform: bool = False) -> WeightedPool:
    """Score every passing candidate under the seed description and weight the pool.

    Where the endpoint cannot score, candidates sampled from the seed
    description reuse their generation-time logprobs; the rest get the pool
    median perplexity.
    """
    cands = [c for c in candidates if c.passed]
    if uniform or scorer is None:
        ppls = [c.perplexity or 1.0 for c in cands]
        return weighted_pool(seed.id, cands, ppls, T, uniform=True)
    resolved: list[Optional[Candidate]] = []
    for c in cands:
        if c.perplexity is not None:
            resolved.append(c)
            continue
        try:
            resolved.append(scorer.scored(c, seed))
        except CapabilityError:
            if c.source_description == seed.description and c.generation_logprobs:
                lps = c.generation_logprobs
                resolved.append(replace(c, token_logprobs=lps, perplexity=perplexity(lps)))
            else:
                resolved.append(None)
    known = [c.perplexity for c in resolved if c is not None]
    unscored = sum(c is None for c in resolved)
    fill = statistics.median(known) if known else 1.0
    if unscored:
        log.warning("seed %s: %d of %d candidates could not be scored; assigned median ppl %.4f",
                    seed.id, unscored, len(cands), fill)
    final = [r if r is not None else c for r, c in zip(resolved, cands)]
    ppls = [r.perplexity if r is not None else fill for r in resolved]
    return weighted_pool(seed.id, final, ppls, T, scored=[r is not None for r in resolved])


def _draw(weights: Sequence[float], rng: random.Random) -> int:
    total = math.fsum(weights)
    u = rng.random() * total
    acc = 0.0
    last = 0
    for i, w in enumerate(weights):
        if w <= 0:
            continue
        acc += w
        last = i
        if u < acc:
            return i
    return last


def select_k(pool: WeightedPool, K: int, rng: random.Random) -> list[Candidate]:
    """Draw K candidates by weight.

    A pool of at least K entries yields K distinct entries (draw, remove,
    renormalize). A smaller pool contributes every entry once, then the
    remainder is drawn with replacement.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(pool) == 0:
        raise EmptyPoolError(f"seed {pool.seed_id} has an empty pool")
    cands, weights = pool.candidates, pool.weights
    if len(cands) >= K:
        remaining = list(range(len(cands)))
        w = list(weights)
        if all(x <= 0 for x in w):
            w = [1.0] * len(w)
        picked = []
        for _ in range(K):
            j = _draw(w, rng)
            picked.append(remaining.pop(j))
            w.pop(j)
            if w and all(x <= 0 for x in w):
                w = [1.0] * len(w)
        return [cands[i] for i in picked]
    out = list(cands)
    out.extend(cands[_draw(weights, rng)] for _ in range(K - len(cands)))
    return out


def self_generated_descriptions(seed: SeedTask, pool: Sequence[Candidate]) -> list[tuple[str, Candidate]]:
    """Distinct chain descriptions (not the seed's) that produced a passing code, with that code."""
    seen: dict[str, Candidate] = {}
    for c in pool:
        if c.origin == "gift" and c.round > 0 and c.passed and c.source_description != seed.description:
            seen.setdefault(c.source_description, c)
    return list(seen.items())


def emit_sft(seed: SeedTask, selected: Sequence[Candidate], mode: str, rng: random.Random,
             pool: Optional[Sequence[Candidate]] = None, iteration: int = 1, extra_descriptions: int = 8,
             codes_per_description: int = 8) -> list[SftRecord]:
    records = [SftRecord(seed.description, c.code, seed.id, "seed_only", c.origin, iteration) for c in selected]
    if mode == "seed_only":
        return records
    if mode not in ("one_pair", "mix_pair"):
        raise ValueError(f"unknown pairing mode {mode!r}")
    if pool is None:
        raise ValueError(f"{mode} needs the seed's candidate pool with chain provenance")
    described = self_generated_descriptions(seed, pool)
    if len(described) > extra_descriptions:
        described = rng.sample(described, extra_descriptions)
    passing = [c for c in pool if c.passed]
    for desc, own in described:
        if mode == "one_pair":
            records.append(SftRecord(desc, own.code, seed.id, "one_pair", own.origin, iteration))
            continue
        if len(passing) >= codes_per_description:
            codes = rng.sample(passing, codes_per_description)
        else:
            codes = passing + rng.choices(passing, k=codes_per_description - len(passing))
        records.extend(SftRecord(desc, c.code, seed.id, "mix_pair", c.origin, iteration) for c in codes)
    return records
