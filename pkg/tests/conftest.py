import math
from pathlib import Path

import pytest

from gift.config import RunConfig
from gift.mock import MockBackend, load_book
from gift.prompts import SummaryExamplePool
from gift.records import PassReport, SeedTask, TestCase, TestResult, load_seed_dataset
from gift.sandbox import Sandbox, SandboxLimits

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

FIRST_REPEATED_CORRECT = '''def first_repeated_char(str1):
    letters_found = []

    for char in str1:
        if char in letters_found:
            return char
        else:
            letters_found.append(char)
'''


@pytest.fixture(scope="session")
def seeds():
    return load_seed_dataset(FIXTURES / "seeds.jsonl")


@pytest.fixture(scope="session")
def book():
    return load_book(FIXTURES / "mock_model.jsonl")


@pytest.fixture(scope="session")
def summary_pool():
    return SummaryExamplePool.load(FIXTURES / "summary_pool.jsonl")


@pytest.fixture(scope="session")
def sandbox():
    return Sandbox(SandboxLimits(wall_timeout_ms=5000), max_concurrency=2)


@pytest.fixture
def mock_backend(book):
    return MockBackend(seed=7, book=book)


@pytest.fixture
def first_task(seeds):
    return seeds[0]


@pytest.fixture
def config():
    return RunConfig(random_seed=1234, chain_parallelism=2, sandbox_concurrency=2)


def passing_report(n=1):
    return PassReport.from_results([TestResult(True)] * n)


def failing_report(n=1):
    return PassReport.from_results([TestResult(False, "wrong_output", "x")] * n)


def toy_task(entry="f", tests=(("f(1)", "1"),)):
    return SeedTask(id=f"toy-{entry}", description=f"Toy task {entry}.", entry_point=entry,
                    signature=f"def {entry}(x):", tests=[TestCase(c, e) for c, e in tests])


LN_HALF = math.log(0.5)


def write_config(directory, seeds=None, **overrides):
    """A mock-backend config file under ``directory`` with absolute fixture paths."""
    import yaml

    data = {
        "backend": {"kind": "mock", "mock": {"seed": 7, "book": str(FIXTURES / "mock_model.jsonl")}},
        "seed_dataset": str(seeds or FIXTURES / "seeds.jsonl"),
        "summary_pool": str(FIXTURES / "summary_pool.jsonl"),
        "output_dir": str(Path(directory) / "out"),
        "sandbox": {"wall_timeout_ms": 5000},
        "sandbox_concurrency": 2,
        "chain_parallelism": 2,
    }
    data.update(overrides)
    path = Path(directory) / "config.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def subset_seeds(directory, n, extra_lines=()):
    """First ``n`` fixture seeds, plus any raw JSON lines, written to a new dataset file."""
    lines = (FIXTURES / "seeds.jsonl").read_text(encoding="utf-8").splitlines()[:n]
    path = Path(directory) / "seeds.jsonl"
    path.write_text("\n".join([*lines, *extra_lines]) + "\n", encoding="utf-8")
    return path


# -- acceptance reporting -------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}
ACCEPTANCE_TITLES = {
    1: "loss identity over random instances",
    2: "Gibbs chain converges to the exact marginal",
    3: "law of total variance",
    4: "perplexity and softmax weights",
    5: "weighted selection statistics",
    6: "generation budget parity",
    7: "end-to-end determinism",
    8: "sandbox pass / timeout / network isolation",
    9: "BLEU and pass-rate ordering",
    10: "fallback to the last chosen code",
}


@pytest.fixture
def verdict():
    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[n] = (bool(ok), ACCEPTANCE_TITLES[n], detail)
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        if n in ACCEPTANCE:
            ok, title, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
        elif any(k for k in ACCEPTANCE):
            terminalreporter.write_line(f"[FAIL] {n:>2}. {ACCEPTANCE_TITLES[n]}: not reached (error or deselected)")
