import hashlib
import json

import pytest

from gift.config import validate_config
from gift.mock import MockBackend, ScriptedBackend, load_book
from gift.pipeline import Components, file_digest, run_iteration, usable_summary
from gift.records import Candidate, ChainRecord, SftRecord, read_records

from conftest import FIXTURES, subset_seeds, write_config

NO_PASS = json.dumps({"id": "nopass/1", "description": "Return the input unchanged.", "entry_point": "no_such_fn",
                      "signature": "def no_such_fn(x):",
                      "tests": [{"call_expression": "no_such_fn(1)", "expected": "1"}]})


@pytest.fixture
def three_seed_config(tmp_path):
    return validate_config(write_config(tmp_path, seeds=subset_seeds(tmp_path, 3)))


def test_three_seeds_give_24_records(three_seed_config):
    manifest = run_iteration(three_seed_config)
    sft = read_records(manifest["sft_file"], SftRecord)
    assert manifest["sft_records"] == 24 == len(sft)
    assert manifest["excluded_seeds"] == []
    seeds = {json.loads(line)["id"]: json.loads(line)["description"]
             for line in (FIXTURES / "seeds.jsonl").read_text().splitlines()}
    assert all(r.description == seeds[r.seed_id] and r.pairing_mode == "seed_only" for r in sft)


def test_sft_codes_come_from_pool(three_seed_config):
    manifest = run_iteration(three_seed_config)
    out = manifest["sft_file"].rsplit("/", 1)[0]
    passing = {(c.seed_id, c.code) for c in read_records(f"{out}/candidates.jsonl", Candidate) if c.passed}
    assert all((r.seed_id, r.code) in passing for r in read_records(manifest["sft_file"], SftRecord))


def test_zero_pool_seed_is_excluded(tmp_path, caplog):
    cfg = validate_config(write_config(tmp_path, seeds=subset_seeds(tmp_path, 2, [NO_PASS])))
    with caplog.at_level("WARNING"):
        manifest = run_iteration(cfg)
    assert manifest["sft_records"] == 16
    assert manifest["excluded_seeds"] == ["nopass/1"]
    assert "nopass/1" in caplog.text


def test_reruns_are_byte_identical(tmp_path):
    a = run_iteration(validate_config(write_config(tmp_path / "a", seeds=subset_seeds(tmp_path, 3))))
    b = run_iteration(validate_config(write_config(tmp_path / "b", seeds=subset_seeds(tmp_path, 3))))
    assert open(a["sft_file"], "rb").read() == open(b["sft_file"], "rb").read()
    assert a["run_id"] == b["run_id"]


def test_resume_skips_logged_seeds(three_seed_config):
    first = run_iteration(three_seed_config)
    sft = open(first["sft_file"], "rb").read()
    dead = ScriptedBackend([])  # any generation call would raise
    scoring = MockBackend(seed=7, book=load_book(FIXTURES / "mock_model.jsonl"))
    again = run_iteration(three_seed_config, parts=Components(three_seed_config, backend=dead,
                                                              scoring_backend=scoring))
    assert dead.prompts == []
    assert open(again["sft_file"], "rb").read() == sft


def test_resume_after_interruption(three_seed_config):
    first = run_iteration(three_seed_config)
    sft = open(first["sft_file"], "rb").read()
    out = first["sft_file"].rsplit("/", 1)[0]
    progress = f"{out}/progress.jsonl"
    lines = open(progress).read().splitlines(keepends=True)
    with open(progress, "w") as fh:
        fh.write(lines[0] + lines[1][: len(lines[1]) // 2])  # one complete seed and a torn line
    again = run_iteration(three_seed_config)
    assert open(again["sft_file"], "rb").read() == sft


def test_manifest_digest_tracks_outputs(three_seed_config):
    manifest = run_iteration(three_seed_config)
    out = manifest["sft_file"].rsplit("/", 1)[0]

    def recompute():
        digests = {name: file_digest(f"{out}/{o['path']}") for name, o in manifest["outputs"].items()}
        return hashlib.sha256(json.dumps(digests, sort_keys=True).encode()).hexdigest()

    assert recompute() == manifest["digest"]
    with open(f"{out}/sft.jsonl", "a") as fh:
        fh.write("\n")
    assert recompute() != manifest["digest"]


def test_gift_outputs_and_budget(three_seed_config):
    manifest = run_iteration(three_seed_config)
    out = manifest["sft_file"].rsplit("/", 1)[0]
    chains = read_records(f"{out}/chains.jsonl", ChainRecord)
    assert [len(c.candidates()) for c in chains] == [60, 60, 60]
    assert all(s["chain_generated"] == 60 for s in manifest["seeds"].values())
    for c in read_records(f"{out}/candidates.jsonl", Candidate):
        if c.perplexity is not None:
            assert c.passed


@pytest.mark.parametrize("method,origins", [("rft", {"rft": 60}), ("rft_rd", {"rft_rd_seed": 10,
                                                                                "rft_rd_rewrite": 50})])
def test_baseline_methods(three_seed_config, method, origins):
    manifest = run_iteration(three_seed_config, method=method)
    out = manifest["sft_file"].rsplit("/", 1)[0]
    cands = read_records(f"{out}/candidates.jsonl", Candidate)
    for sid in manifest["seeds"]:
        mine = [c.origin for c in cands if c.seed_id == sid]
        assert {o: mine.count(o) for o in set(mine)} == origins
    assert manifest["sft_records"] == 24


def test_pairing_modes_in_pipeline(tmp_path):
    cfg = validate_config(write_config(tmp_path, seeds=subset_seeds(tmp_path, 2), pairing_mode="one_pair"))
    sft = read_records(run_iteration(cfg)["sft_file"], SftRecord)
    assert sum(r.pairing_mode == "seed_only" for r in sft) == 16
    extra = [r for r in sft if r.pairing_mode == "one_pair"]
    assert 0 < len(extra) <= 16


def test_missing_seed_dataset(tmp_path):
    cfg = validate_config(write_config(tmp_path))
    cfg.seed_dataset = None
    with pytest.raises(ValueError):
        run_iteration(cfg)


def test_usable_summary():
    assert usable_summary("Write a function to add two numbers.")
    assert not usable_summary("def f(): return 1")
    assert not usable_summary("")
    assert not usable_summary("word " * 100)
