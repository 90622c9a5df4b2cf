"""Analysis statistics: Pass@1, per-origin pass rates, pairwise BLEU and perplexity histograms."""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gift.backend import Backend
from gift.prompts import CODEGEN_STOP, assemble_code, render_codegen_prompt
from gift.records import Candidate, SeedTask
from gift.sandbox import Sandbox, pass_rate
from gift.selection import WeightedPool

# identifiers/numbers as one token, every other non-space character on its own
_BLEU_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
MAX_ORDER = 4


def bleu_tokenize(code: str) -> list[str]:
    return _BLEU_TOKEN_RE.findall(code)


def pass_at_1_from_outcomes(outcomes: Sequence[Sequence[bool]]) -> float:
    if not outcomes:
        raise ValueError("empty evaluation set")
    per_task = []
    for samples in outcomes:
        if not samples:
            raise ValueError("every task needs at least one sample")
        per_task.append(sum(samples) / len(samples))
    return sum(per_task) / len(per_task)


def pass_at_1(eval_tasks: Sequence[SeedTask], backend: Backend, sandbox: Sandbox, samples_per_task: int = 1,
              temperature: float = 1.0, max_tokens: int = 512) -> float:
    """Mean over tasks of the fraction of passing samples (the unbiased k=1 estimator)."""
    if samples_per_task < 1:
        raise ValueError("samples_per_task must be >= 1")
    if not eval_tasks:
        raise ValueError("empty evaluation set")
    outcomes = []
    for task in eval_tasks:
        comps = backend.complete(render_codegen_prompt(task.description, task), n=samples_per_task,
                                 temperature=temperature, max_tokens=max_tokens, stop=CODEGEN_STOP)
        outcomes.append([sandbox.run(assemble_code(task, c.text), task).all_passed for c in comps])
    return pass_at_1_from_outcomes(outcomes)


def origin_pass_rates(candidates: Sequence[Candidate]) -> dict[str, float]:
    if not candidates:
        raise ValueError("no candidates")
    groups = defaultdict(list)
    for c in candidates:
        if c.pass_report is None:
            raise ValueError("candidate without a pass report")
        groups[c.origin].append(c.pass_report)
    return {origin: pass_rate(reports) for origin, reports in sorted(groups.items())}


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(candidate: Sequence[str], reference: Sequence[str], max_order: int = MAX_ORDER) -> float:
    """BLEU with uniform weights, add-one smoothing on every n-gram precision, standard brevity penalty."""
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_order + 1):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        matched = sum(min(k, ref[g]) for g, k in cand.items())
        total = sum(cand.values())
        log_p += math.log((matched + 1) / (total + 1)) / max_order
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_p)


@dataclass(frozen=True)
class BleuSummary:
    per_code: tuple[float, ...]
    mean: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    def to_dict(self) -> dict:
        return {"per_code": list(self.per_code), "mean": self.mean, "min": self.minimum, "q1": self.q1,
                "median": self.median, "q3": self.q3, "max": self.maximum}


def pairwise_bleu(codes: Sequence[str]) -> BleuSummary:
    """Mean similarity of each code to the others; both reference directions are averaged."""
    if len(codes) < 2:
        raise ValueError("pairwise BLEU needs at least 2 codes")
    toks = [bleu_tokenize(c) for c in codes]
    n = len(toks)
    pair = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.5 * (sentence_bleu(toks[i], toks[j]) + sentence_bleu(toks[j], toks[i]))
            pair[i][j] = pair[j][i] = s
    per_code = tuple(math.fsum(pair[i][j] for j in range(n) if j != i) / (n - 1) for i in range(n))
    q = np.percentile(per_code, [0, 25, 50, 75, 100])
    return BleuSummary(per_code, math.fsum(per_code) / n, *(float(v) for v in q))


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts) + self.underflow + self.overflow

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "counts": list(self.counts), "underflow": self.underflow,
                "overflow": self.overflow, "total": self.total}


def histogram(values: Sequence[float], bins: Sequence[float]) -> Histogram:
    """Counts per [edge_i, edge_i+1) with the last bin closed; out-of-range values are tallied separately."""
    edges = [float(b) for b in bins]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bins must be at least two strictly increasing edges")
    vals = np.asarray(values, dtype=float)
    counts, _ = np.histogram(vals, bins=edges)
    under = int(np.sum(vals < edges[0]))
    over = int(np.sum(vals > edges[-1]))
    return Histogram(tuple(edges), tuple(int(c) for c in counts), under, over)


def ppl_histogram(pool: WeightedPool, bins: Sequence[float]) -> Histogram:
    if len(pool) == 0:
        raise ValueError("empty pool")
    return histogram([e.ppl for e in pool.entries], bins)
