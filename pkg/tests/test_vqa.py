from collections import Counter

import pytest

from diagcap.core import DiagramKind
from diagcap.mermaid import serialize
from diagcap.synth import GenConfig
from diagcap.vqa import (
    AnswerKey,
    Family,
    QuestionError,
    QuestionKind,
    build_eval_set,
    capacity,
    make_questions,
    read_questions,
    write_questions,
)

from conftest import make_diagrams
from oracles import key_for


@pytest.fixture(scope="module")
def corpus():
    return make_diagrams(100)


@pytest.fixture(scope="module")
def eval_set(corpus):
    return build_eval_set(corpus, 11, 200, 100)


def test_totals_and_ids(eval_set):
    items, key = eval_set
    assert (key.total_single, key.total_multi) == (200, 100)
    assert len({it.item_id for it in items}) == 300


def test_key_matches_independent_traversal(corpus, eval_set):
    items, key = eval_set
    text = {a.diagram_id: serialize(a) for a in corpus}
    for it in items:
        assert key_for(it, text[it.diagram_id]) == key.answers[it.item_id], it.item_id


def test_option_shape(eval_set):
    items, _ = eval_set
    for it in items:
        texts = [t for _, t in it.options]
        assert len(set(texts)) == len(texts)
        if it.kind is QuestionKind.SINGLE:
            assert len(it.options) == 4 and len(it.correct) == 1
        else:
            assert len(it.options) == 5 and 2 <= len(it.correct) <= 4
        assert [letter for letter, _ in it.options] == list("ABCDE"[:len(it.options)])


def test_no_answer_leaks_into_stem(eval_set):
    items, _ = eval_set
    for it in items:
        for letter in it.correct:
            text = it.option_text(letter)
            if not text.isdigit():
                assert text.lower() not in it.stem.lower()


def test_all_families_used(eval_set):
    items, _ = eval_set
    assert {it.family for it in items} == set(Family)
    assert {(it.family, it.kind) for it in items} >= {
        (Family.NEXT_STEP_ON_BRANCH, QuestionKind.SINGLE), (Family.DIRECT_SUCCESSORS, QuestionKind.MULTI)}


def test_answer_letters_are_spread(eval_set):
    items, key = eval_set
    singles = Counter(next(iter(key.answers[it.item_id])) for it in items if it.kind is QuestionKind.SINGLE)
    assert set(singles) == set("ABCD")
    assert max(singles.values()) < 0.4 * sum(singles.values())


def test_deterministic(corpus):
    a, ka = build_eval_set(corpus, 3, 40, 20)
    b, kb = build_eval_set(corpus, 3, 40, 20)
    assert a == b and ka.answers == kb.answers
    c, _ = build_eval_set(corpus, 4, 40, 20)
    assert a != c


def test_family_filter(corpus):
    items = make_questions(corpus[1], 0, 1, 0, families=[Family.MESSAGE_COUNT_AT_NODE])
    assert items[0].family is Family.MESSAGE_COUNT_AT_NODE
    items, _ = build_eval_set(corpus, 0, 30, 0, families=[Family.NODE_COUNT])
    assert {it.family for it in items} == {Family.NODE_COUNT}


def test_shortfall_names_missing_structure():
    flow = make_diagrams(1, kind=DiagramKind.FLOWCHART, base=GenConfig(decision_probability=0.0))[0]
    with pytest.raises(QuestionError, match="NextStepOnBranch needs a Decision node"):
        make_questions(flow, 0, 1, 0, families=[Family.NEXT_STEP_ON_BRANCH])
    assert capacity(flow)[QuestionKind.MULTI] == 0
    with pytest.raises(QuestionError, match="shortfall"):
        build_eval_set([flow], 0, 1, 1)


def test_json_round_trip(tmp_path, eval_set):
    items, key = eval_set
    write_questions(items, tmp_path / "q.jsonl")
    key.save(tmp_path / "k.json")
    assert "correct" not in (tmp_path / "q.jsonl").read_text()
    loaded_key = AnswerKey.load(tmp_path / "k.json")
    assert loaded_key.answers == key.answers
    assert read_questions(tmp_path / "q.jsonl", loaded_key) == items


def test_key_totals_checked(tmp_path, eval_set):
    _, key = eval_set
    data = key.to_json()
    data["a_s_t"] += 1
    with pytest.raises(ValueError, match="totals"):
        AnswerKey.from_json(data)


def test_prompt_layout(eval_set):
    items, _ = eval_set
    single = next(it for it in items if it.kind is QuestionKind.SINGLE)
    lines = single.prompt().splitlines()
    assert lines[0] == single.stem and lines[1].startswith("A. ") and len(lines) == 6
