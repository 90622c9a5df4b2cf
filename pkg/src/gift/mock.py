"""Deterministic stand-ins for an inference endpoint.

``MockBackend`` behaves like a small code model: it recognises the three
prompt kinds, answers codegen prompts with a correct or a broken variant of a
known solution (probability depends on where the description came from), and
emits logprobs that are a pure function of (context, token position, token).
Because scoring uses the same function, a code scored against the prompt it
was sampled from reproduces its generation-time logprobs exactly.

``ScriptedBackend`` replays a fixed queue of responses, for tests that need
an exact sequence of outcomes.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from gift.backend import Backend, BackendError, CapabilityError, Completion, _check_complete_args
from gift.prompts import CODE_HEADER, REWRITE_DESC, REWRITE_CUE, SUMMARY_CUE, parse_codegen_prompt, prompt_kind

REWRITE_TAG = "Rephrased:"
_TOKEN_RE = re.compile(r"\s*\S+|\s+")
MIN_TOKEN_PROB = 0.05


def tokenize(text: str) -> list[str]:
    """Whitespace-attached word tokens; ``"".join(tokenize(t)) == t``."""
    return _TOKEN_RE.findall(text)


def unit_hash(*parts) -> float:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2.0 ** 64


def short_hash(*parts, n: int = 6) -> str:
    return hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).hexdigest()[:n]


@dataclass
class MockTask:
    entry_point: str
    description: str
    correct: list[str]
    wrong: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "MockTask":
        return cls(d["entry_point"], d["description"], list(d["correct"]), list(d.get("wrong", [])))


def load_book(path: Union[str, Path]) -> dict[str, MockTask]:
    book = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                t = MockTask.from_dict(json.loads(line))
                book[t.entry_point] = t
    return book


def _function_body(code: str) -> str:
    lines = code.strip("\n").splitlines()
    if lines and lines[0].lstrip().startswith("def "):
        lines = lines[1:]
    return "\n".join(lines).strip("\n") + "\n"


DEFAULT_PASS_PROB = {"seed": 0.6, "rewrite": 0.3, "summary": 0.5}


class MockBackend(Backend):
    def __init__(self, seed: int = 0, book: Optional[dict[str, MockTask]] = None,
                 pass_prob: Optional[dict[str, float]] = None, uniform_logprob: Optional[float] = None,
                 scoring: bool = True):
        self.seed = seed
        self.book = book or {}
        self.pass_prob = {**DEFAULT_PASS_PROB, **(pass_prob or {})}
        self.uniform_logprob = uniform_logprob
        self.scoring = scoring

    @classmethod
    def from_options(cls, options: dict, **overrides) -> "MockBackend":
        opts = {**options, **overrides}
        book = opts.get("book")
        if isinstance(book, (str, Path)):
            book = load_book(book)
        return cls(seed=opts.get("seed", 0), book=book, pass_prob=opts.get("pass_prob"),
                   uniform_logprob=opts.get("uniform_logprob"), scoring=opts.get("scoring", True))

    # -- logprob model -------------------------------------------------------------
    def token_logprob(self, context: str, index: int, token: str) -> float:
        if self.uniform_logprob is not None:
            return self.uniform_logprob
        p = MIN_TOKEN_PROB + (1 - MIN_TOKEN_PROB) * unit_hash(self.seed, "lp", context, index, token)
        return math.log(p)

    def logprobs_for(self, context: str, text: str) -> list[float]:
        return [self.token_logprob(context, i, tok) for i, tok in enumerate(tokenize(text))]

    # -- responders ----------------------------------------------------------------
    def describe_source(self, description: str, task: MockTask) -> str:
        if description.strip() == task.description.strip():
            return "seed"
        if description.startswith(REWRITE_TAG):
            return "rewrite"
        return "summary"

    def _codegen(self, prompt: str, key: str) -> str:
        parsed = parse_codegen_prompt(prompt)
        entry, desc = parsed if parsed else ("f", "")
        task = self.book.get(entry)
        if task is None:
            return f"    return None  # {short_hash(key)}\n"
        p = self.pass_prob[self.describe_source(desc, task)]
        if unit_hash(key, "pass") < p:
            variants = task.correct
        else:
            variants = task.wrong or [f"def {entry}(*args):\n    return None\n"]
        code = variants[int(unit_hash(key, "variant") * len(variants))]
        return _function_body(code)

    def _summarize(self, prompt: str, key: str) -> str:
        target = prompt.rsplit(CODE_HEADER, 1)[-1].rsplit(SUMMARY_CUE, 1)[0]
        m = re.search(r"def\s+(\w+)", target)
        name = m.group(1).replace("_", " ") if m else "the given task"
        return f" Write a python function to {name} (variant {short_hash(key)}).\n"

    def _rewrite(self, prompt: str, key: str) -> str:
        original = prompt.split(REWRITE_DESC, 1)[-1].rsplit(REWRITE_CUE, 1)[0].strip()
        return f" {REWRITE_TAG} {original} [{short_hash(key)}]\n"

    def respond(self, prompt: str, key: str) -> str:
        kind = prompt_kind(prompt)
        if kind == "codegen":
            return self._codegen(prompt, key)
        if kind == "summarize":
            return self._summarize(prompt, key)
        if kind == "rewrite":
            return self._rewrite(prompt, key)
        return f"mock completion {short_hash(key)}\n"

    def complete(self, prompt, n=1, temperature=1.0, max_tokens=512, want_logprobs=False, stop=None):
        _check_complete_args(prompt, n, temperature)
        bucket = round(temperature, 2)
        out = []
        for i in range(n):
            key = f"{self.seed}|{bucket}|{n}|{i}|{prompt}"
            text = self.respond(prompt, key)
            tokens = tokenize(text)
            finish = "stop"
            if len(tokens) > max_tokens:
                tokens = tokens[:max_tokens]
                text = "".join(tokens)
                finish = "length"
            lps = [self.token_logprob(prompt, j, t) for j, t in enumerate(tokens)] if want_logprobs else None
            out.append(Completion(text, lps, finish, tuple(tokens) if want_logprobs else None))
        return out

    def score(self, context, continuation):
        if not continuation:
            raise ValueError("continuation must be nonempty")
        if not self.scoring:
            raise CapabilityError("mock configured without scoring support")
        return self.logprobs_for(context, continuation)


Response = Union[Sequence[str], Exception, Callable[[str, int], Sequence[str]]]


class ScriptedBackend(Backend):
    """Replays ``responses`` in order, one entry per ``complete`` call.

    An entry is a list of texts, an exception to raise, or a callable
    ``(prompt, n) -> texts``. Running out of script raises BackendError.
    """

    def __init__(self, responses: Sequence[Response], logprob: float = math.log(0.5), scoring: bool = True):
        self.responses = list(responses)
        self.logprob = logprob
        self.scoring = scoring
        self.prompts: list[str] = []
        self.scored: list[tuple[str, str]] = []

    def complete(self, prompt, n=1, temperature=1.0, max_tokens=512, want_logprobs=False, stop=None):
        _check_complete_args(prompt, n, temperature)
        self.prompts.append(prompt)
        if not self.responses:
            raise BackendError("script exhausted")
        entry = self.responses.pop(0)
        if isinstance(entry, Exception):
            raise entry
        texts = list(entry(prompt, n) if callable(entry) else entry)
        if len(texts) != n:
            raise BackendError(f"script entry has {len(texts)} texts, {n} requested")
        out = []
        for t in texts:
            lps = [self.logprob] * len(tokenize(t)) if want_logprobs else None
            out.append(Completion(t, lps, "stop"))
        return out

    def score(self, context, continuation):
        if not continuation:
            raise ValueError("continuation must be nonempty")
        if not self.scoring:
            raise CapabilityError("scripted backend without scoring")
        self.scored.append((context, continuation))
        return [self.logprob] * len(tokenize(continuation))
