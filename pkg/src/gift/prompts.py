"""Prompt templates for code generation, code summarization and description rewriting."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from gift.records import SeedTask

CODE_HEADER = "###Code:"
SUMMARY_CUE = "###Description of the given code:"
REWRITE_HEADER = "Rewrite the given Description"
REWRITE_DESC = "###Description:"
REWRITE_CUE = "###New Description:"
BEGIN_SOLUTION = "### BEGIN SOLUTION"
END_SOLUTION = "### END SOLUTION"

INDENT = "    "

# Completion endpoints keep going past the function; these cut it off.
CODEGEN_STOP = ("\ndef ", "\nclass ", "\nif __name__", "\nprint(", "\nassert ")
TEXT_STOP = ("###",)


def render_codegen_prompt(description: str, task: SeedTask) -> str:
    """Function head plus a docstring holding ``description`` and the prompt examples.

    Only the docstring body depends on ``description``; everything else comes
    from the task, so chain rounds differ from the seed prompt in that span only.
    """
    if not description or not description.strip():
        raise ValueError("description must be nonempty")
    body = description.strip().replace("\n", "\n" + INDENT)
    lines = [task.signature.rstrip(), f'{INDENT}""" {body}']
    for ex in task.examples_for_prompt:
        lines.append(f"{INDENT}>>> {ex.call}")
        lines.append(f"{INDENT}{ex.output}")
    lines.append(f'{INDENT}"""')
    return "\n".join(lines) + "\n"


def render_rewrite_prompt(description: str) -> str:
    return f"{REWRITE_HEADER}\n{REWRITE_DESC}\n{description.strip()}\n{REWRITE_CUE}\n"


@dataclass(frozen=True)
class SummaryExample:
    code: str
    description: str


class SummaryExamplePool:
    """In-context (code, description) examples for the summarization prompt."""

    def __init__(self, examples: Sequence[SummaryExample]):
        self.examples = tuple(examples)

    def __len__(self):
        return len(self.examples)

    def choose(self, rng: random.Random) -> SummaryExample:
        if not self.examples:
            raise ValueError("summary example pool is empty")
        return self.examples[rng.randrange(len(self.examples))]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SummaryExamplePool":
        examples = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                d = json.loads(line)
                try:
                    examples.append(SummaryExample(code=d["code"], description=d["description"]))
                except KeyError as e:
                    raise ValueError(f"{path}:{lineno}: missing field {e.args[0]!r}") from e
        return cls(examples)

    def dump(self, path: Union[str, Path]) -> int:
        with open(path, "w", encoding="utf-8") as fh:
            for ex in self.examples:
                fh.write(json.dumps({"code": ex.code, "description": ex.description},
                                    ensure_ascii=False, sort_keys=True) + "\n")
        return len(self.examples)


def mark_solution(code: str) -> str:
    """Wrap the function body in BEGIN/END SOLUTION comments, keeping the def line outside."""
    lines = code.rstrip().splitlines()
    head = []
    if lines and lines[0].lstrip().startswith("def "):
        head = [lines.pop(0)]
    indent = next((ln[:len(ln) - len(ln.lstrip())] for ln in lines if ln.strip()), INDENT) or INDENT
    return "\n".join(head + [indent + BEGIN_SOLUTION, *lines, indent + END_SOLUTION])


def render_summarization_prompt(code: str, pool: SummaryExamplePool, rng: random.Random) -> str:
    example = pool.choose(rng)
    return (
        f"{CODE_HEADER}\n{example.code.rstrip()}\n{SUMMARY_CUE}\n{example.description.strip()}\n"
        f"\n\n{CODE_HEADER}\n{mark_solution(code)}\n\n{SUMMARY_CUE}\n"
    )


def render_zero_shot_summarization_prompt(code: str) -> str:
    return f"{CODE_HEADER}\n{mark_solution(code)}\n\n{SUMMARY_CUE}\n"


def clean_text_completion(text: str) -> str:
    """Cut a summary/rewrite completion at the next section marker and trim it."""
    for stop in TEXT_STOP:
        idx = text.find(stop)
        if idx != -1:
            text = text[:idx]
    return text.strip()


def assemble_code(task: SeedTask, completion: str) -> str:
    """Turn a raw completion into a runnable function definition.

    Completion models continue after the docstring, so the body is re-attached
    to the signature. A completion that restates the whole function is used as is.
    """
    if re.search(rf"^\s*def\s+{re.escape(task.entry_point)}\s*\(", completion, re.MULTILINE):
        return completion.strip("\n") + "\n"
    return task.signature.rstrip() + "\n" + completion.strip("\n") + "\n"


def completion_body(task: SeedTask, code: str) -> str:
    """Inverse of :func:`assemble_code`: the text a model would have completed."""
    head = task.signature.rstrip() + "\n"
    if code.startswith(head):
        return code[len(head):]
    return code


_DEF_RE = re.compile(r"^def\s+(\w+)\s*\(", re.MULTILINE)
_DOC_RE = re.compile(r'"""\s?(.*?)(?:\n\s*>>>|\n\s*""")', re.DOTALL)


def parse_codegen_prompt(prompt: str) -> Optional[tuple[str, str]]:
    """Recover (entry_point, description) from a rendered codegen prompt."""
    m = _DEF_RE.search(prompt)
    d = _DOC_RE.search(prompt)
    if not m or not d:
        return None
    desc = "\n".join(line.strip() for line in d.group(1).splitlines()).strip()
    return m.group(1), desc


def prompt_kind(prompt: str) -> str:
    stripped = prompt.rstrip()
    if stripped.endswith(SUMMARY_CUE):
        return "summarize"
    if stripped.endswith(REWRITE_CUE):
        return "rewrite"
    if parse_codegen_prompt(prompt) is not None:
        return "codegen"
    return "other"
