"""Shared record types and the line-delimited JSON formats built on them.

Every persisted artifact (seed dataset, chain log, candidate pool, SFT output)
is one JSON object per line. Field vocabularies are documented in
``docs/schema.md``; ``to_dict``/``from_dict`` here are the single source of
truth for the encoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

ORIGINS = ("gift", "rft", "rft_rd_seed", "rft_rd_rewrite")
FAILURE_KINDS = ("wrong_output", "runtime_error", "timeout", "resource_limit")
TERMINAL_REASONS = ("completed", "backend_error", "budget_exhausted")
PAIRING_MODES = ("seed_only", "one_pair", "mix_pair")
SUMMARY_SOURCES = ("chosen", "previous", "failing")

PPL_TOLERANCE = 1e-9


class RecordError(ValueError):
    """A record violates its schema or invariants."""


class DatasetError(RecordError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise RecordError(message)


@dataclass(frozen=True)
class TestCase:
    call_expression: str
    expected: str
    comparison: str = "equality"
    tolerance: Optional[float] = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        _require(bool(self.call_expression.strip()), "call_expression must be nonempty")
        _require(self.comparison in ("equality", "approx"),
                 f"comparison must be 'equality' or 'approx', got {self.comparison!r}")
        if self.comparison == "approx":
            _require(self.tolerance is not None and self.tolerance > 0,
                     "approx comparison requires a positive tolerance")

    def to_dict(self) -> dict:
        d = {"call_expression": self.call_expression, "expected": self.expected,
             "comparison": self.comparison}
        if self.tolerance is not None:
            d["tolerance"] = self.tolerance
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestCase":
        return cls(call_expression=d["call_expression"], expected=d["expected"],
                   comparison=d.get("comparison", "equality"), tolerance=d.get("tolerance"))


@dataclass(frozen=True)
class PromptExample:
    """One input/output pair rendered as a doctest line inside the prompt."""

    call: str
    output: str

    def to_dict(self) -> dict:
        return {"call": self.call, "output": self.output}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptExample":
        return cls(call=d["call"], output=d["output"])


@dataclass(frozen=True)
class SeedTask:
    id: str
    description: str
    entry_point: str
    signature: str
    tests: tuple[TestCase, ...]
    examples_for_prompt: tuple[PromptExample, ...] = ()
    reference_code: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))
        object.__setattr__(self, "examples_for_prompt", tuple(self.examples_for_prompt))
        _require(bool(self.id), "id must be nonempty")
        _require(bool(self.description.strip()), "description must be nonempty")
        _require(self.entry_point.isidentifier(), f"entry_point {self.entry_point!r} is not an identifier")
        _require(bool(self.signature.strip()), "signature must be nonempty")
        _require(len(self.tests) > 0, "tests must be nonempty")
        for t in self.tests:
            _require(self.entry_point in t.call_expression,
                     f"call_expression {t.call_expression!r} does not reference {self.entry_point!r}")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "description": self.description,
            "entry_point": self.entry_point,
            "signature": self.signature,
            "tests": [t.to_dict() for t in self.tests],
        }
        if self.examples_for_prompt:
            d["examples_for_prompt"] = [e.to_dict() for e in self.examples_for_prompt]
        if self.reference_code is not None:
            d["reference_code"] = self.reference_code
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SeedTask":
        return cls(
            id=d["id"],
            description=d["description"],
            entry_point=d["entry_point"],
            signature=d["signature"],
            tests=tuple(TestCase.from_dict(t) for t in d["tests"]),
            examples_for_prompt=tuple(PromptExample.from_dict(e) for e in d.get("examples_for_prompt", ())),
            reference_code=d.get("reference_code"),
        )


@dataclass(frozen=True)
class TestResult:
    passed: bool
    failure_kind: Optional[str] = None
    detail: str = ""

    __test__ = False

    def __post_init__(self):
        if self.passed:
            _require(self.failure_kind is None, "passing test cannot carry a failure_kind")
        else:
            _require(self.failure_kind in FAILURE_KINDS, f"unknown failure_kind {self.failure_kind!r}")

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failure_kind": self.failure_kind, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "TestResult":
        return cls(passed=d["passed"], failure_kind=d.get("failure_kind"), detail=d.get("detail", ""))


@dataclass(frozen=True)
class PassReport:
    per_test: tuple[TestResult, ...]
    all_passed: bool
    wall_time_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "per_test", tuple(self.per_test))
        _require(self.all_passed == (bool(self.per_test) and all(t.passed for t in self.per_test)),
                 "all_passed must equal the conjunction of per_test results")

    @classmethod
    def from_results(cls, results: Sequence[TestResult], wall_time_ms: int = 0) -> "PassReport":
        results = tuple(results)
        return cls(results, bool(results) and all(r.passed for r in results), wall_time_ms)

    def to_dict(self) -> dict:
        return {"per_test": [t.to_dict() for t in self.per_test], "all_passed": self.all_passed,
                "wall_time_ms": self.wall_time_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "PassReport":
        return cls(tuple(TestResult.from_dict(t) for t in d["per_test"]), d["all_passed"],
                   d.get("wall_time_ms", 0))


def perplexity_of(logprobs: Sequence[float]) -> float:
    if not logprobs:
        raise ValueError("perplexity of an empty logprob list is undefined")
    return math.exp(-math.fsum(logprobs) / len(logprobs))


@dataclass(frozen=True)
class Candidate:
    """One generated code plus the provenance needed by the analyses.

    ``token_logprobs``/``perplexity`` hold the selection-time score (code
    conditioned on the seed description). ``generation_logprobs`` are the
    logprobs reported when the code was sampled from ``source_description``.
    """

    code: str
    seed_id: str
    source_description: str
    round: int
    origin: str
    pass_report: Optional[PassReport] = None
    token_logprobs: Optional[tuple[float, ...]] = None
    perplexity: Optional[float] = None
    generation_logprobs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.token_logprobs is not None:
            object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        if self.generation_logprobs is not None:
            object.__setattr__(self, "generation_logprobs", tuple(self.generation_logprobs))
        _require(self.round >= 0, "round must be >= 0")
        _require(self.origin in ORIGINS, f"unknown origin {self.origin!r}")
        for lps in (self.token_logprobs, self.generation_logprobs):
            if lps is not None:
                _require(all(lp <= PPL_TOLERANCE for lp in lps), "logprobs must be <= 0")
        if self.perplexity is not None:
            _require(self.perplexity > 0, "perplexity must be positive")
            _require(bool(self.token_logprobs), "perplexity requires token_logprobs")
            expected = perplexity_of(self.token_logprobs)
            _require(abs(expected - self.perplexity) <= PPL_TOLERANCE * max(1.0, expected),
                     f"perplexity {self.perplexity} inconsistent with token_logprobs ({expected})")

    @property
    def passed(self) -> bool:
        return self.pass_report is not None and self.pass_report.all_passed

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "seed_id": self.seed_id,
            "source_description": self.source_description,
            "round": self.round,
            "origin": self.origin,
            "pass_report": self.pass_report.to_dict() if self.pass_report else None,
            "token_logprobs": list(self.token_logprobs) if self.token_logprobs is not None else None,
            "perplexity": self.perplexity,
            "generation_logprobs": (list(self.generation_logprobs)
                                    if self.generation_logprobs is not None else None),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        pr = d.get("pass_report")
        return cls(
            code=d["code"],
            seed_id=d["seed_id"],
            source_description=d["source_description"],
            round=d["round"],
            origin=d["origin"],
            pass_report=PassReport.from_dict(pr) if pr else None,
            token_logprobs=d.get("token_logprobs"),
            perplexity=d.get("perplexity"),
            generation_logprobs=d.get("generation_logprobs"),
        )


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    input_description: str
    generated_codes: tuple[Candidate, ...]
    chosen_index: Optional[int] = None
    summary_description: Optional[str] = None
    summarized_code: Optional[str] = None
    summary_source: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "generated_codes", tuple(self.generated_codes))
        _require(self.round_index >= 1, "round_index must be >= 1")
        if self.chosen_index is not None:
            _require(0 <= self.chosen_index < len(self.generated_codes), "chosen_index out of range")
            _require(self.generated_codes[self.chosen_index].passed, "chosen code must pass all tests")
        if self.summary_source is not None:
            _require(self.summary_source in SUMMARY_SOURCES, f"unknown summary_source {self.summary_source!r}")

    @property
    def chosen_code(self) -> Optional[Candidate]:
        return None if self.chosen_index is None else self.generated_codes[self.chosen_index]

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "input_description": self.input_description,
            "generated_codes": [c.to_dict() for c in self.generated_codes],
            "chosen_index": self.chosen_index,
            "summary_description": self.summary_description,
            "summarized_code": self.summarized_code,
            "summary_source": self.summary_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(
            round_index=d["round_index"],
            input_description=d["input_description"],
            generated_codes=tuple(Candidate.from_dict(c) for c in d["generated_codes"]),
            chosen_index=d.get("chosen_index"),
            summary_description=d.get("summary_description"),
            summarized_code=d.get("summarized_code"),
            summary_source=d.get("summary_source"),
        )


@dataclass(frozen=True)
class ChainRecord:
    seed_id: str
    rounds: tuple[RoundRecord, ...]
    terminal_reason: str = "completed"
    iteration: int = 1
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        _require(self.terminal_reason in TERMINAL_REASONS, f"unknown terminal_reason {self.terminal_reason!r}")
        for i, r in enumerate(self.rounds, start=1):
            _require(r.round_index == i, "round indices must be consecutive from 1")

    def candidates(self) -> list[Candidate]:
        return [c for r in self.rounds for c in r.generated_codes]

    def to_dict(self) -> dict:
        return {"seed_id": self.seed_id, "iteration": self.iteration,
                "terminal_reason": self.terminal_reason, "error": self.error,
                "rounds": [r.to_dict() for r in self.rounds]}

    @classmethod
    def from_dict(cls, d: dict) -> "ChainRecord":
        return cls(seed_id=d["seed_id"], rounds=tuple(RoundRecord.from_dict(r) for r in d["rounds"]),
                   terminal_reason=d.get("terminal_reason", "completed"),
                   iteration=d.get("iteration", 1), error=d.get("error"))


@dataclass(frozen=True)
class SftRecord:
    description: str
    code: str
    seed_id: str
    pairing_mode: str = "seed_only"
    candidate_origin: str = "gift"
    iteration: int = 1

    def __post_init__(self):
        _require(bool(self.description.strip()), "description must be nonempty")
        _require(bool(self.code.strip()), "code must be nonempty")
        _require(self.pairing_mode in PAIRING_MODES, f"unknown pairing_mode {self.pairing_mode!r}")
        _require(self.candidate_origin in ORIGINS, f"unknown origin {self.candidate_origin!r}")
        _require(self.iteration >= 1, "iteration must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SftRecord":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


Record = Union[SeedTask, Candidate, ChainRecord, SftRecord]


def dumps(record: Record) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)


def write_records(path: Union[str, Path], records: Iterable[Record]) -> int:
    """Write ``records`` one JSON object per line and return how many were written.

    The records are encoded in full before the file is opened, so an invalid
    record leaves no partial output behind.
    """
    lines = []
    for rec in records:
        if not hasattr(rec, "to_dict"):
            raise RecordError(f"not a record: {type(rec).__name__}")
        # re-validate: from_dict runs every __post_init__ check on the encoded form
        encoded = dumps(rec)
        type(rec).from_dict(json.loads(encoded))
        lines.append(encoded + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return len(lines)


def read_records(path: Union[str, Path], kind: type) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(kind.from_dict(json.loads(line)))
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed JSON ({e.msg})", lineno) from e
            except KeyError as e:
                raise DatasetError(f"missing field {e.args[0]!r}", lineno) from e
            except (RecordError, TypeError, ValueError) as e:
                raise DatasetError(str(e), lineno) from e
    return out


def load_seed_dataset(path: Union[str, Path]) -> list[SeedTask]:
    tasks: list[SeedTask] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                task = SeedTask.from_dict(json.loads(line))
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed JSON ({e.msg})", lineno) from e
            except KeyError as e:
                raise DatasetError(f"missing field {e.args[0]!r}", lineno) from e
            except (RecordError, TypeError) as e:
                raise DatasetError(str(e), lineno) from e
            if task.id in seen:
                raise DatasetError(f"duplicate id {task.id!r} (first seen on line {seen[task.id]})", lineno)
            seen[task.id] = lineno
            tasks.append(task)
    return tasks
