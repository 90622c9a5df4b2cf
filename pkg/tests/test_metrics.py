import math
import random
import re

import pytest
from hypothesis import given, settings, strategies as st

from gift.metrics import (bleu_tokenize, histogram, origin_pass_rates, pairwise_bleu, pass_at_1,
                          pass_at_1_from_outcomes, ppl_histogram, sentence_bleu)
from gift.mock import ScriptedBackend
from gift.records import Candidate
from gift.selection import weighted_pool

from conftest import failing_report, passing_report, toy_task

SNIPPETS = ["return a + b", "return a + b + c", "return b + a"]
# frozen from the brute-force oracle below
PAIR = {(0, 1): 0.6065306597126334, (0, 2): 0.4518010018049224, (1, 0): 0.6147881529512643,
        (1, 2): 0.3303164318013807, (2, 0): 0.4518010018049224, (2, 1): 0.3258798048281462}
PER_CODE = [0.5312302040684356, 0.4693787623233561, 0.38994956005984294]


def _oracle_bleu(c, r):
    """List-based n-gram matching with explicit removal; no Counter arithmetic."""
    logs = 0.0
    for n in range(1, 5):
        cg = [tuple(c[i:i + n]) for i in range(len(c) - n + 1)]
        rg = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
        m = 0
        for g in cg:
            if g in rg:
                rg.remove(g)
                m += 1
        logs += math.log((m + 1) / (len(cg) + 1))
    bp = 1.0 if len(c) > len(r) else math.exp(1 - len(r) / len(c))
    return bp * math.exp(logs / 4)


def _toks(s):
    return re.findall(r"\w+|[^\w\s]", s)


def test_tokenizer():
    assert bleu_tokenize("x[i]+=1  # hi") == ["x", "[", "i", "]", "+", "=", "1", "#", "hi"]


def test_oracle_agrees_with_frozen_values():
    for (i, j), v in PAIR.items():
        assert _oracle_bleu(_toks(SNIPPETS[i]), _toks(SNIPPETS[j])) == pytest.approx(v, abs=1e-12)


def test_sentence_bleu_hand_case():
    # every n-gram of the shorter code matches, so the score is the brevity penalty exp(1 - 6/4)
    assert sentence_bleu(_toks(SNIPPETS[0]), _toks(SNIPPETS[1])) == pytest.approx(math.exp(-0.5), abs=1e-15)


def test_sentence_bleu_matches_frozen_pairs():
    for (i, j), v in PAIR.items():
        assert abs(sentence_bleu(bleu_tokenize(SNIPPETS[i]), bleu_tokenize(SNIPPETS[j])) - v) < 1e-9


def test_pairwise_bleu_three_snippets():
    s = pairwise_bleu(SNIPPETS)
    assert all(abs(a - b) < 1e-9 for a, b in zip(s.per_code, PER_CODE))
    assert s.mean == pytest.approx(sum(PER_CODE) / 3, abs=1e-12)
    assert s.minimum == min(s.per_code) and s.maximum == max(s.per_code)


def test_identical_codes_score_one():
    code = "def f(x):\n    return x * 2\n"
    assert pairwise_bleu([code, code]).per_code == (1.0, 1.0)


def test_token_disjoint_codes_near_zero():
    # add-one smoothing keeps tiny disjoint codes well above zero, so use codes of realistic length
    a = " ".join(f"alpha{i}" for i in range(30))
    b = " ".join(f"beta{i}" for i in range(30))
    assert pairwise_bleu([a, b]).mean < 0.05


def test_pairwise_needs_two():
    with pytest.raises(ValueError):
        pairwise_bleu(["x"])


code_text = st.lists(st.sampled_from(["a", "b", "c", "+", "(", ")", "return", "x1"]), min_size=1, max_size=10).map(
    " ".join)


@settings(max_examples=100, deadline=None)
@given(st.lists(code_text, min_size=2, max_size=5), st.randoms(use_true_random=False))
def test_pairwise_bleu_permutation_invariant(codes, rnd):
    perm = list(range(len(codes)))
    rnd.shuffle(perm)
    a = pairwise_bleu(codes)
    b = pairwise_bleu([codes[i] for i in perm])
    assert a.mean == pytest.approx(b.mean, abs=1e-12)
    assert [b.per_code[perm.index(i)] for i in range(len(codes))] == pytest.approx(list(a.per_code), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(code_text, code_text)
def test_sentence_bleu_matches_oracle(a, b):
    ta, tb = bleu_tokenize(a), bleu_tokenize(b)
    assert sentence_bleu(ta, tb) == pytest.approx(_oracle_bleu(ta, tb), abs=1e-12)


def test_pass_at_1_examples():
    assert pass_at_1_from_outcomes([[True], [False]]) == 0.5
    assert pass_at_1_from_outcomes([[True], [True, True]]) == 1.0
    with pytest.raises(ValueError):
        pass_at_1_from_outcomes([])


def test_pass_at_1_counting_oracle():
    rng = random.Random(3)
    outcomes = [[rng.random() < 0.4 for _ in range(4)] for _ in range(10)]
    hand = sum(sum(o) for o in outcomes) / 40  # equal samples per task, so the mean of means is the pooled rate
    assert pass_at_1_from_outcomes(outcomes) == pytest.approx(hand, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=1, max_size=4), min_size=1, max_size=6), st.data())
def test_pass_at_1_bounds_and_monotone(outcomes, data):
    v = pass_at_1_from_outcomes(outcomes)
    assert 0.0 <= v <= 1.0
    i = data.draw(st.integers(0, len(outcomes) - 1))
    j = data.draw(st.integers(0, len(outcomes[i]) - 1))
    flipped = [list(o) for o in outcomes]
    flipped[i][j] = True
    assert pass_at_1_from_outcomes(flipped) >= v


def test_pass_at_1_end_to_end(sandbox):
    task = toy_task()
    backend = ScriptedBackend([["    return x\n", "    return 0\n"]])
    assert pass_at_1([task], backend, sandbox, samples_per_task=2) == 0.5


def test_histogram_example():
    h = histogram([1.1, 1.2, 3.0], [1, 2, 4])
    assert h.counts == (2, 1) and h.total == 3


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=50.0), max_size=30))
def test_histogram_conserves_count(values):
    assert histogram(values, [1, 2, 5, 10]).total == len(values)


def test_ppl_histogram_conserves_pool():
    cands = [Candidate(f"c{i}", "s", "d", 1, "gift", passing_report()) for i in range(5)]
    pool = weighted_pool("s", cands, [1.0, 1.5, 2.5, 9.0, 400.0], 2.0)
    assert ppl_histogram(pool, [1, 2, 10]).total == 5


def _origin(origin, n, n_pass):
    return [Candidate(f"c{i}", "s", "d", 0, origin, passing_report() if i < n_pass else failing_report())
            for i in range(n)]


def test_origin_pass_rates():
    rates = origin_pass_rates(_origin("rft_rd_seed", 10, 6) + _origin("rft_rd_rewrite", 50, 5))
    assert rates == {"rft_rd_rewrite": pytest.approx(0.1), "rft_rd_seed": pytest.approx(0.6)}
    assert list(origin_pass_rates(_origin("rft", 4, 1))) == ["rft"]
    with pytest.raises(ValueError):
        origin_pass_rates([])
