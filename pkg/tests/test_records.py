import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from gift.records import (Candidate, ChainRecord, DatasetError, PassReport, RecordError, RoundRecord, SeedTask,
                          SftRecord, TestCase, TestResult, load_seed_dataset, read_records, write_records)

from conftest import FIXTURES, failing_report


def _seed_line(id_, tests=None):
    tests = [{"call_expression": "f(1)", "expected": "1"}] if tests is None else tests
    return json.dumps({"id": id_, "description": "Do f.", "entry_point": "f", "signature": "def f(x):",
                       "tests": tests})


def test_load_two_records_preserves_order(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text(_seed_line("b") + "\n" + _seed_line("a") + "\n")
    tasks = load_seed_dataset(p)
    assert [t.id for t in tasks] == ["b", "a"]


def test_empty_tests_rejected_with_line_number(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text(_seed_line("a") + "\n" + _seed_line("b", tests=[]) + "\n")
    with pytest.raises(DatasetError, match="tests must be nonempty") as exc:
        load_seed_dataset(p)
    assert exc.value.line == 2


def test_duplicate_ids_cite_both_lines(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text(_seed_line("a") + "\n" + _seed_line("a") + "\n")
    with pytest.raises(DatasetError) as exc:
        load_seed_dataset(p)
    msg = str(exc.value)
    assert "line 2" in msg and "line 1" in msg and "duplicate" in msg


def test_malformed_line_names_line_and_field(tmp_path):
    p = tmp_path / "s.jsonl"
    d = json.loads(_seed_line("a"))
    del d["signature"]
    p.write_text(_seed_line("x") + "\n" + json.dumps(d) + "\n")
    with pytest.raises(DatasetError, match=r"line 2: missing field 'signature'"):
        load_seed_dataset(p)
    p.write_text("{not json\n")
    with pytest.raises(DatasetError, match="line 1"):
        load_seed_dataset(p)


def test_fixture_dataset_loads():
    tasks = load_seed_dataset(FIXTURES / "seeds.jsonl")
    assert len(tasks) == 6 and len({t.id for t in tasks}) == 6


def test_call_expression_must_reference_entry_point():
    with pytest.raises(RecordError):
        SeedTask("a", "d", "f", "def f(x):", [TestCase("g(1)", "1")])


def _sft(i):
    return SftRecord(f"desc {i}", f"def f(x):\n    return {i}\n", "s", "seed_only", "gift", 1)


def test_write_eight_records(tmp_path):
    p = tmp_path / "out.jsonl"
    assert write_records(p, [_sft(i) for i in range(8)]) == 8
    assert len(p.read_text().splitlines()) == 8


def test_write_empty_list_creates_empty_file(tmp_path):
    p = tmp_path / "out.jsonl"
    assert write_records(p, []) == 0
    assert p.exists() and p.read_text() == ""


def test_invalid_record_rejected_before_any_write(tmp_path):
    p = tmp_path / "out.jsonl"
    bad = _sft(0)
    object.__setattr__(bad, "pairing_mode", "bogus")  # bypass the frozen constructor check
    with pytest.raises(RecordError):
        write_records(p, [_sft(1), bad])
    assert not p.exists()


def test_unwritable_path_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        write_records(tmp_path / "missing-dir" / "out.jsonl", [_sft(0)])


def test_perplexity_must_match_logprobs():
    lps = [-1.0, -2.0]
    Candidate("c", "s", "d", 0, "rft", token_logprobs=lps, perplexity=math.exp(1.5))
    with pytest.raises(RecordError):
        Candidate("c", "s", "d", 0, "rft", token_logprobs=lps, perplexity=2.0)
    with pytest.raises(RecordError):
        Candidate("c", "s", "d", 0, "rft", token_logprobs=[0.5])


def test_pass_report_conjunction_invariant():
    with pytest.raises(RecordError):
        PassReport((TestResult(True), TestResult(False, "timeout")), True)


def test_chosen_code_must_pass():
    bad = Candidate("c", "s", "d", 0, "gift", failing_report())
    with pytest.raises(RecordError):
        RoundRecord(1, "d", [bad], chosen_index=0)


def test_round_indices_consecutive():
    r = RoundRecord(2, "d", [])
    with pytest.raises(RecordError):
        ChainRecord("s", [r])


# -- round-trip over generated records --------------------------------------------------

text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=40).filter(str.strip)
logprobs = st.lists(st.floats(min_value=-20, max_value=0, allow_nan=False), min_size=1, max_size=8)


@st.composite
def pass_reports(draw):
    results = draw(st.lists(st.one_of(
        st.just(TestResult(True)),
        st.builds(TestResult, st.just(False), st.sampled_from(["wrong_output", "runtime_error", "timeout",
                                                              "resource_limit"]), text)), min_size=1, max_size=4))
    return PassReport.from_results(results, draw(st.integers(0, 10_000)))


@st.composite
def candidates(draw):
    lps = draw(st.one_of(st.none(), logprobs))
    ppl = None
    if lps is not None and draw(st.booleans()):
        ppl = math.exp(-math.fsum(lps) / len(lps))
    return Candidate(draw(text), draw(text), draw(text), draw(st.integers(0, 30)),
                     draw(st.sampled_from(["gift", "rft", "rft_rd_seed", "rft_rd_rewrite"])),
                     draw(st.one_of(st.none(), pass_reports())), lps, ppl, draw(st.one_of(st.none(), logprobs)))


@st.composite
def chains(draw):
    rounds = []
    for k in range(1, draw(st.integers(0, 4)) + 1):
        cands = draw(st.lists(candidates(), max_size=3))
        passing = [i for i, c in enumerate(cands) if c.passed]
        chosen = passing[0] if passing else None
        rounds.append(RoundRecord(k, draw(text), cands, chosen, draw(st.one_of(st.none(), text)),
                                  draw(st.one_of(st.none(), text)),
                                  draw(st.sampled_from([None, "chosen", "previous", "failing"]))))
    return ChainRecord(draw(text), rounds, draw(st.sampled_from(["completed", "backend_error", "budget_exhausted"])),
                       draw(st.integers(1, 5)))


sft_records = st.builds(SftRecord, text, text, text, st.sampled_from(["seed_only", "one_pair", "mix_pair"]),
                        st.sampled_from(["gift", "rft", "rft_rd_seed", "rft_rd_rewrite"]), st.integers(1, 9))


@st.composite
def seed_tasks(draw):
    entry = draw(st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True))
    tests = [TestCase(f"{entry}({draw(text)!r})", draw(text), *draw(st.sampled_from(
        [("equality", None), ("approx", 1e-6)]))) for _ in range(draw(st.integers(1, 3)))]
    return SeedTask(draw(text), draw(text), entry, f"def {entry}(x):", tests)


@pytest.mark.parametrize("strategy,kind", [(sft_records, SftRecord), (candidates(), Candidate),
                                           (chains(), ChainRecord), (seed_tasks(), SeedTask)])
def test_round_trip(tmp_path_factory, strategy, kind):
    d = tmp_path_factory.mktemp("rt")

    @settings(max_examples=60, deadline=None)
    @given(st.lists(strategy, max_size=5))
    def check(records):
        p = d / "r.jsonl"
        assert write_records(p, records) == len(records)
        assert read_records(p, kind) == records

    check()
