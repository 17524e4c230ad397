import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from diagcap.metrics import (
    AccuracyReport,
    CiderScorer,
    IdMismatchError,
    bleu,
    cider,
    count_chunks,
    extract_letters,
    meteor_lite,
    random_guess_baseline,
    round1,
    score_answers,
    score_corpus,
    tokenize,
)
from diagcap.vqa import AnswerKey, Family, QaItem, QuestionKind

from oracles import brute_bleu, accuracy_rows

words = st.lists(st.sampled_from(list("abcde")), min_size=0, max_size=10)


def test_tokenize():
    assert tokenize("Step 1: UE sends 'Attach' to eNB.") == (
        "step", "1", ":", "ue", "sends", "'", "attach", "'", "to", "enb", ".")
    assert tokenize("  ") == ()


@settings(max_examples=500, deadline=None)
@given(words, st.lists(words.filter(bool), min_size=1, max_size=3))
def test_bleu_matches_brute_force(cand, refs):
    assert abs(bleu(cand, refs) - brute_bleu(cand, refs)) <= 1e-12


def test_bleu_closed_forms():
    assert bleu(list("abcd"), [list("abcd")]) == 1.0
    assert bleu("the cat sat".split(), ["the cat sat down".split()]) == pytest.approx(math.exp(1 - 4 / 3), abs=1e-15)
    assert bleu([], [["a"]]) == 0.0
    assert bleu(["x"], [["a", "b"]]) == 0.0
    # clipped unigram precision 1/4, higher orders smoothed to 1/(total+1); no brevity penalty
    expected = (1 / 4 * 1 / 4 * 1 / 3 * 1 / 2) ** 0.25
    assert bleu(["the"] * 4, [["the", "cat"]]) == pytest.approx(expected)
    with pytest.raises(ValueError):
        bleu(["a"], [])


def test_bleu_brevity_uses_closest_reference():
    cand = list("abc")
    assert bleu(cand, [list("abcdefgh"), list("abcd")]) == pytest.approx(bleu(cand, [list("abcd")]))


def test_meteor_closed_forms():
    for n in (1, 3, 7):
        toks = [f"w{i}" for i in range(n)]
        assert meteor_lite(toks, toks) == pytest.approx(1 - 0.5 / n ** 3)
    assert meteor_lite(list("abc"), list("cba")) == pytest.approx(0.5)
    assert meteor_lite(list("abc"), list("xyz")) == 0.0
    assert meteor_lite([], list("a")) == 0.0
    p, r = 1.0, 0.75
    f = p * r / (0.9 * p + 0.1 * r)
    assert meteor_lite("the cat sat".split(), "the cat sat down".split()) == pytest.approx(f * (1 - 0.5 / 27))


def test_meteor_multi_reference_takes_best():
    assert meteor_lite(list("ab"), [list("xy"), list("ab")]) == meteor_lite(list("ab"), list("ab"))


@settings(max_examples=300, deadline=None)
@given(words, words)
def test_meteor_alignment_is_maximal(cand, ref):
    from diagcap.metrics import _align
    from collections import Counter
    pairs = _align(cand, ref)
    assert len(pairs) == sum((Counter(cand) & Counter(ref)).values())
    assert all(cand[i] == ref[j] for i, j in pairs)
    assert len({i for i, _ in pairs}) == len({j for _, j in pairs}) == len(pairs)
    assert 0.0 <= meteor_lite(cand, ref) <= 1.0


def test_meteor_prefers_contiguous_runs():
    # "a b" can align as one chunk even though "a" also occurs earlier alone
    assert count_chunks([(1, 0), (2, 1)]) == 1
    from diagcap.metrics import _align
    assert count_chunks(_align(list("axab"), list("ab"))) == 1


def test_cider_cases():
    corpus = [["the quick brown fox jumps".split()], ["a lazy dog sleeps here".split()],
              ["one two three four five".split()]]
    scorer = CiderScorer(corpus)
    assert scorer.score(corpus[0][0], corpus[0]) == pytest.approx(10.0)
    assert scorer.score("nothing in common at all".split(), corpus[0]) == 0.0
    partial = scorer.score("the quick brown cat".split(), corpus[0])
    assert 0.0 < partial < 10.0
    # a term present in every document carries no weight
    assert cider(["x"], [["x"]], [[["x"]], [["x", "y"]]]) == 0.0
    with pytest.raises(ValueError):
        CiderScorer([])


def test_score_corpus_identity_and_mismatch():
    refs = {"d1": "Step 1: Start (Boot).\nStep 2: End (Off).", "d2": "Step 1: A sends 'x' to B."}
    scores = score_corpus(dict(refs), refs)
    assert scores.mean.bleu == pytest.approx(1.0)
    assert set(scores.per_item) == {"d1", "d2"}
    with pytest.raises(IdMismatchError, match="d2"):
        score_corpus({"d1": "x"}, refs)


@pytest.mark.parametrize("text, letters", [
    ("B", ["B"]),
    ("Answer: B, D", ["B", "D"]),
    ("answer: c and a", ["C", "A"]),
    ("The answer is A. Also A again", ["A"]),
    ("I think it is a loop, so C", ["C"]),
    ("ABCD", []),
    ("", []),
    (None, []),
    ("Options E and B", ["E", "B"]),
])
def test_extract_letters(text, letters):
    assert extract_letters(text) == letters


@pytest.mark.parametrize("value, expected", [(72.33, 72.3), (0.05, 0.1), (64.33333, 64.3), (82.5, 82.5), (0.25, 0.3)])
def test_round_half_up(value, expected):
    assert round1(value) == expected


@pytest.mark.parametrize("row", accuracy_rows(), ids=lambda r: f"{r[0]}-{r[1]}")
def test_accuracy_rows(row):
    s, m, ps, pm, pa = row
    rep = AccuracyReport(s, 200, m, 100)
    assert (round1(rep.prec_s), round1(rep.prec_m), round1(rep.prec_a)) == (ps, pm, pa)
    assert rep.pooling_residual() == pytest.approx(0.0, abs=1e-9)


def test_accuracy_report_guards():
    assert AccuracyReport(0, 0, 0, 0).prec_a == 0.0
    with pytest.raises(ValueError):
        AccuracyReport(5, 4, 0, 0)


def _item(i, kind, n_options):
    return QaItem(f"q{i}", "d", kind, Family.NODE_COUNT, "s?",
                  tuple(zip("ABCDE", [str(k) for k in range(n_options)])), frozenset())


def test_score_answers_exact_set():
    items = [_item(0, QuestionKind.SINGLE, 4), _item(1, QuestionKind.MULTI, 5), _item(2, QuestionKind.MULTI, 5)]
    key = AnswerKey({"q0": frozenset("B"), "q1": frozenset("AC"), "q2": frozenset("BD")},
                    {it.item_id: it.kind for it in items})
    rep = score_answers({"q0": "B", "q1": "Answer: C, A", "q2": "B"}, key, items)
    assert (rep.a_s_r, rep.a_s_t, rep.a_m_r, rep.a_m_t) == (1, 1, 1, 2)
    with pytest.raises(IdMismatchError):
        score_answers({}, key, items[:1])


def test_random_guess_baseline():
    items = [_item(0, QuestionKind.SINGLE, 4), _item(1, QuestionKind.MULTI, 5)]
    assert random_guess_baseline(items) == pytest.approx(100 * (0.25 + 1 / 25) / 2)


def test_bleu_oracle_random_sample():
    rng = random.Random(0)
    for _ in range(2000):
        cand = [rng.choice("abcde") for _ in range(rng.randint(0, 10))]
        ref = [rng.choice("abcde") for _ in range(rng.randint(1, 10))]
        assert abs(bleu(cand, [ref]) - brute_bleu(cand, [ref])) <= 1e-12
