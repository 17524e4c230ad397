"""Objective question generation with oracle-verified answer keys.

Each question family enumerates every well-posed question a diagram
supports (a *candidate*).  Candidates are shuffled per family with the
caller's seed and drawn round-robin across families, so requests are
deterministic in ``(ast, seed)``.  Every emitted key is re-derived from
:func:`diagcap.core.graph_oracle` before it is returned.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .core import DiagramAst, FlowchartGraph, NodeShape, graph_oracle, require_valid
from .rng import SplitMix64, derive_seed

LETTERS = "ABCDE"
SINGLE_OPTIONS = 4
MULTI_OPTIONS = 5


class QuestionKind(Enum):
    SINGLE = "single"
    MULTI = "multi"


class Family(Enum):
    NEXT_STEP_ON_BRANCH = "NextStepOnBranch"
    DIRECT_SUCCESSORS = "DirectSuccessors"
    MESSAGE_COUNT_AT_NODE = "MessageCountAtNode"
    MESSAGE_RECEIVER = "MessageReceiver"
    MESSAGE_ORDER = "MessageOrder"
    NODE_COUNT = "NodeCount"


class QuestionError(ValueError):
    """The requested questions cannot be built from the given diagram(s)."""


@dataclass(frozen=True)
class QaItem:
    item_id: str
    diagram_id: str
    kind: QuestionKind
    family: Family
    stem: str
    options: tuple[tuple[str, str], ...]
    correct: frozenset[str]

    def option_text(self, letter: str) -> str:
        return dict(self.options)[letter]

    def to_json(self) -> dict:
        """Public record; the key is deliberately left out."""
        return {
            "item_id": self.item_id,
            "diagram_id": self.diagram_id,
            "kind": self.kind.value,
            "family": self.family.value,
            "stem": self.stem,
            "options": [{"letter": letter, "text": text} for letter, text in self.options],
        }

    def prompt(self) -> str:
        lines = [self.stem]
        lines.extend(f"{letter}. {text}" for letter, text in self.options)
        if self.kind is QuestionKind.SINGLE:
            lines.append("Answer with the letter of the single correct option.")
        else:
            lines.append("This question has more than one correct option. Answer with all correct letters.")
        return "\n".join(lines)


def item_from_json(record: dict, correct: Iterable[str] = ()) -> QaItem:
    return QaItem(
        item_id=record["item_id"],
        diagram_id=record["diagram_id"],
        kind=QuestionKind(record["kind"]),
        family=Family(record.get("family", Family.NODE_COUNT.value)),
        stem=record["stem"],
        options=tuple((o["letter"], o["text"]) for o in record["options"]),
        correct=frozenset(correct),
    )


@dataclass
class AnswerKey:
    answers: dict[str, frozenset[str]] = field(default_factory=dict)
    kinds: dict[str, QuestionKind] = field(default_factory=dict)

    @classmethod
    def from_items(cls, items: Iterable[QaItem]) -> "AnswerKey":
        key = cls()
        for it in items:
            key.answers[it.item_id] = it.correct
            key.kinds[it.item_id] = it.kind
        return key

    @property
    def total_single(self) -> int:
        return sum(1 for k in self.kinds.values() if k is QuestionKind.SINGLE)

    @property
    def total_multi(self) -> int:
        return sum(1 for k in self.kinds.values() if k is QuestionKind.MULTI)

    def to_json(self) -> dict:
        return {
            "a_s_t": self.total_single,
            "a_m_t": self.total_multi,
            "answers": {i: sorted(self.answers[i]) for i in sorted(self.answers)},
            "kinds": {i: self.kinds[i].value for i in sorted(self.kinds)},
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnswerKey":
        key = cls(
            answers={i: frozenset(v) for i, v in data["answers"].items()},
            kinds={i: QuestionKind(v) for i, v in data["kinds"].items()},
        )
        if key.total_single != data.get("a_s_t", key.total_single) or \
                key.total_multi != data.get("a_m_t", key.total_multi):
            raise ValueError("answer key totals do not match its entries")
        return key

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AnswerKey":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class _Candidate:
    family: Family
    kind: QuestionKind
    anchor: tuple
    stem: str
    correct_texts: tuple[str, ...]
    distractor_texts: tuple[str, ...]
    numeric: bool = False


def _unique_texts(texts: Iterable[str]) -> set[str]:
    counts = Counter(texts)
    return {t for t, c in counts.items() if c == 1}


def _leaks(stem: str, texts: Iterable[str]) -> bool:
    low = stem.lower()
    return any(t.lower() in low for t in texts)


def _numeric_distractors(value: int) -> tuple[str, ...]:
    near = [value - 1, value + 1, value + 2, value - 2, value + 3, value + 4]
    return tuple(str(v) for v in near if v >= 0)


def _flowchart_candidates(ast: DiagramAst) -> list[_Candidate]:
    graph: FlowchartGraph = ast.body
    facts = graph_oracle(ast)
    label = {n.id: n.label for n in graph.nodes}
    unique = _unique_texts(label.values())
    all_texts = sorted(set(label.values()))
    out = []

    for n in graph.nodes:
        if n.shape is not NodeShape.DECISION or n.label not in unique:
            continue
        for e in graph.edges:
            if e.src != n.id:
                continue
            stem = (f"Following the flowchart, what is the next step when "
                    f"'{n.label}' evaluates {e.label}?")
            target = label[facts.branch_target(n.id, e.label)]
            pool = tuple(t for t in all_texts if t not in (target, n.label))
            if len(pool) >= SINGLE_OPTIONS - 1 and not _leaks(stem, [target]):
                out.append(_Candidate(Family.NEXT_STEP_ON_BRANCH, QuestionKind.SINGLE, (n.id, e.label),
                                      stem, (target,), pool))

    n_process = sum(1 for n in graph.nodes if n.shape is NodeShape.PROCESS)
    out.append(_Candidate(Family.NODE_COUNT, QuestionKind.SINGLE, (), "How many process steps does this "
                          "flowchart contain?", (str(n_process),), _numeric_distractors(n_process), numeric=True))

    for n in graph.nodes:
        if n.label not in unique:
            continue
        succ_texts = sorted({label[s] for s in facts.successor_set(n.id)})
        if not 2 <= len(succ_texts) <= 4:
            continue
        stem = f"Which of the following are direct successors of '{n.label}'?"
        pool = tuple(t for t in all_texts if t not in succ_texts and t != n.label)
        if len(succ_texts) + len(pool) >= MULTI_OPTIONS and len(succ_texts) < MULTI_OPTIONS \
                and not _leaks(stem, succ_texts):
            out.append(_Candidate(Family.DIRECT_SUCCESSORS, QuestionKind.MULTI, (n.id,), stem,
                                  tuple(succ_texts), pool))
    return out


def _sequence_candidates(ast: DiagramAst) -> list[_Candidate]:
    d = ast.body
    facts = graph_oracle(ast)
    name = {p.id: p.display_name for p in d.participants}
    names = [p.display_name for p in d.participants]
    labels = [m.label for m in d.messages]
    unique = _unique_texts(labels)
    out = []

    for p in d.participants:
        count = facts.involved[p.id]
        stem = f"How many signaling messages does {p.display_name} send or receive?"
        out.append(_Candidate(Family.MESSAGE_COUNT_AT_NODE, QuestionKind.SINGLE, (p.id,), stem,
                              (str(count),), _numeric_distractors(count), numeric=True))

    if len(names) >= SINGLE_OPTIONS:
        for m in d.messages:
            if m.label not in unique:
                continue
            stem = f"Which node receives the message '{m.label}'?"
            target = name[m.receiver]
            pool = tuple(n for n in names if n != target)
            if not _leaks(stem, [target]):
                out.append(_Candidate(Family.MESSAGE_RECEIVER, QuestionKind.SINGLE, (m.seq_index,), stem,
                                      (target,), pool))

    distinct_labels = sorted(set(labels))
    for m in d.messages[:-1]:
        nxt = d.messages[m.seq_index + 1]
        if m.label not in unique or nxt.label == m.label:
            continue
        stem = f"Which message is sent immediately after '{m.label}'?"
        pool = tuple(t for t in distinct_labels if t not in (m.label, nxt.label))
        if len(pool) >= SINGLE_OPTIONS - 1 and not _leaks(stem, [nxt.label]):
            out.append(_Candidate(Family.MESSAGE_ORDER, QuestionKind.SINGLE, (m.seq_index,), stem,
                                  (nxt.label,), pool))

    # multi-answer variants
    if len(names) >= MULTI_OPTIONS:
        for p in d.participants:
            receivers = sorted({name[m.receiver] for m in d.messages if m.sender == p.id})
            if not 2 <= len(receivers) <= 4:
                continue
            stem = f"Which nodes receive at least one message from {p.display_name}?"
            pool = tuple(n for n in names if n not in receivers)
            if not _leaks(stem, receivers):
                out.append(_Candidate(Family.MESSAGE_RECEIVER, QuestionKind.MULTI, (p.id,), stem,
                                      tuple(receivers), pool))

    if len(unique) == len(labels):
        for m in d.messages:
            later = [x.label for x in d.messages[m.seq_index + 1:]]
            earlier = [x.label for x in d.messages[:m.seq_index]]
            if len(later) < 2 or not earlier or len(later) + len(earlier) < MULTI_OPTIONS:
                continue
            stem = f"Which of the following messages are sent after '{m.label}'?"
            if not _leaks(stem, later):
                out.append(_Candidate(Family.MESSAGE_ORDER, QuestionKind.MULTI, (m.seq_index,), stem,
                                      tuple(later), tuple(earlier)))
    return out


def question_candidates(ast: DiagramAst) -> list[_Candidate]:
    require_valid(ast)
    if isinstance(ast.body, FlowchartGraph):
        return _flowchart_candidates(ast)
    return _sequence_candidates(ast)


def capacity(ast: DiagramAst, families: Iterable[Family] | None = None) -> dict[QuestionKind, int]:
    wanted = set(families) if families is not None else set(Family)
    cands = [c for c in question_candidates(ast) if c.family in wanted]
    return {k: sum(1 for c in cands if c.kind is k) for k in QuestionKind}


def _answer_from_oracle(ast: DiagramAst, cand: _Candidate, options: list[str]) -> frozenset[str]:
    """Recompute which option letters are correct straight from graph_oracle."""
    facts = graph_oracle(ast)
    body = ast.body
    truth: set[str]
    if cand.family is Family.NEXT_STEP_ON_BRANCH:
        node_id, branch = cand.anchor
        truth = {body.node(facts.branch_target(node_id, branch)).label}
    elif cand.family is Family.NODE_COUNT:
        truth = {str(sum(1 for n in body.nodes if n.shape is NodeShape.PROCESS))}
    elif cand.family is Family.DIRECT_SUCCESSORS:
        truth = {body.node(s).label for s in facts.successor_set(cand.anchor[0])}
    elif cand.family is Family.MESSAGE_COUNT_AT_NODE:
        truth = {str(facts.involved[cand.anchor[0]])}
    elif cand.family is Family.MESSAGE_RECEIVER and cand.kind is QuestionKind.SINGLE:
        truth = {body.participant(body.messages[cand.anchor[0]].receiver).display_name}
    elif cand.family is Family.MESSAGE_RECEIVER:
        pid = cand.anchor[0]
        sent = facts.messages_by_participant[pid]
        truth = {body.participant(body.messages[i].receiver).display_name
                 for i in sent if body.messages[i].sender == pid}
    elif cand.kind is QuestionKind.SINGLE:
        truth = {body.messages[cand.anchor[0] + 1].label}
    else:
        truth = {m.label for m in body.messages[cand.anchor[0] + 1:]}
    return frozenset(LETTERS[i] for i, text in enumerate(options) if text in truth)


def _realize(ast: DiagramAst, cand: _Candidate, rng: SplitMix64, item_id: str) -> QaItem:
    if cand.kind is QuestionKind.SINGLE:
        correct = [cand.correct_texts[0]]
        n_options = SINGLE_OPTIONS
    else:
        hi = min(4, len(cand.correct_texts), MULTI_OPTIONS - 1)
        lo = max(2, MULTI_OPTIONS - len(cand.distractor_texts))
        n_correct = rng.randint(lo, hi)
        correct = rng.sample(cand.correct_texts, n_correct)
        n_options = MULTI_OPTIONS
    if cand.numeric:
        distractors = list(cand.distractor_texts[:n_options - len(correct)])
    else:
        distractors = rng.sample(cand.distractor_texts, n_options - len(correct))
    options = correct + distractors
    rng.shuffle(options)
    expected = frozenset(LETTERS[i] for i, text in enumerate(options) if text in correct)
    verified = _answer_from_oracle(ast, cand, options)
    if verified != expected or len(set(options)) != len(options):
        raise AssertionError(f"answer key for {item_id} disagrees with graph_oracle: {expected} vs {verified}")
    return QaItem(
        item_id=item_id,
        diagram_id=ast.diagram_id,
        kind=cand.kind,
        family=cand.family,
        stem=cand.stem,
        options=tuple(zip(LETTERS, options)),
        correct=expected,
    )


def _ordered_candidates(cands: list[_Candidate], rng: SplitMix64) -> list[_Candidate]:
    """Shuffle within each family, then interleave families round-robin."""
    by_family: dict[Family, list[_Candidate]] = {}
    for c in cands:
        by_family.setdefault(c.family, []).append(c)
    queues = []
    for fam in Family:
        if fam in by_family:
            group = by_family[fam]
            rng.shuffle(group)
            queues.append(group)
    out = []
    while any(queues):
        for q in queues:
            if q:
                out.append(q.pop(0))
    return out


def _shortfall_message(ast: DiagramAst, kind: QuestionKind, wanted: set[Family], need: int, have: int) -> str:
    reasons = []
    body = ast.body
    if isinstance(body, FlowchartGraph):
        if Family.NEXT_STEP_ON_BRANCH in wanted and not any(n.shape is NodeShape.DECISION for n in body.nodes):
            reasons.append("NextStepOnBranch needs a Decision node")
        if Family.DIRECT_SUCCESSORS in wanted and kind is QuestionKind.MULTI:
            reasons.append("DirectSuccessors needs a node with 2-4 distinct successors and 5 distinct labels")
    else:
        if Family.MESSAGE_RECEIVER in wanted:
            reasons.append(f"MessageReceiver needs >= {SINGLE_OPTIONS if kind is QuestionKind.SINGLE else 5} "
                           f"participants (diagram has {len(body.participants)})")
        if Family.MESSAGE_ORDER in wanted:
            reasons.append("MessageOrder needs enough distinctly-labeled messages")
    fams = ", ".join(sorted(f.value for f in wanted))
    detail = "; ".join(reasons) or "not enough well-posed questions"
    return (f"{ast.diagram_id}: requested {need} {kind.value}-choice questions from [{fams}] "
            f"but only {have} are possible ({detail})")


def make_questions(
    ast: DiagramAst,
    seed: int,
    n_single: int,
    n_multi: int,
    families: Iterable[Family] | None = None,
    id_prefix: str | None = None,
) -> list[QaItem]:
    """Build ``n_single`` single-choice then ``n_multi`` multi-choice items for one diagram."""
    wanted = set(families) if families is not None else set(Family)
    cands = [c for c in question_candidates(ast) if c.family in wanted]
    prefix = id_prefix or ast.diagram_id
    rng = SplitMix64(seed)
    items: list[QaItem] = []
    for kind, need in ((QuestionKind.SINGLE, n_single), (QuestionKind.MULTI, n_multi)):
        pool = [c for c in cands if c.kind is kind]
        if need > len(pool):
            raise QuestionError(_shortfall_message(ast, kind, wanted, need, len(pool)))
        for cand in _ordered_candidates(pool, rng)[:need]:
            items.append(_realize(ast, cand, rng, f"{prefix}-q{len(items):02d}"))
    return items


def build_eval_set(
    corpus: list[DiagramAst],
    seed: int,
    n_single_total: int = 200,
    n_multi_total: int = 100,
    families: Iterable[Family] | None = None,
) -> tuple[list[QaItem], AnswerKey]:
    """Spread the requested totals round-robin over ``corpus`` and key them."""
    wanted = set(families) if families is not None else set(Family)
    caps = [capacity(ast, wanted) for ast in corpus]
    alloc = [{QuestionKind.SINGLE: 0, QuestionKind.MULTI: 0} for _ in corpus]
    for kind, total in ((QuestionKind.SINGLE, n_single_total), (QuestionKind.MULTI, n_multi_total)):
        left = total
        while left > 0:
            progressed = False
            for i in range(len(corpus)):
                if left == 0:
                    break
                if alloc[i][kind] < caps[i][kind]:
                    alloc[i][kind] += 1
                    left -= 1
                    progressed = True
            if not progressed:
                per_family = Counter(
                    c.family.value for ast in corpus for c in question_candidates(ast)
                    if c.kind is kind and c.family in wanted)
                raise QuestionError(
                    f"corpus of {len(corpus)} diagrams supplies only {total - left} of {total} "
                    f"{kind.value}-choice questions (shortfall {left}); available per family: "
                    f"{dict(sorted(per_family.items()))}")
    items: list[QaItem] = []
    for i, ast in enumerate(corpus):
        a = alloc[i]
        if a[QuestionKind.SINGLE] or a[QuestionKind.MULTI]:
            items.extend(make_questions(ast, derive_seed(seed, i), a[QuestionKind.SINGLE],
                                        a[QuestionKind.MULTI], wanted))
    return items, AnswerKey.from_items(items)


def write_questions(items: Iterable[QaItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in items:
            fh.write(json.dumps(it.to_json(), ensure_ascii=False) + "\n")


def read_questions(path: str | Path, key: AnswerKey | None = None) -> list[QaItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                correct = key.answers.get(rec["item_id"], ()) if key else ()
                items.append(item_from_json(rec, correct))
    return items
