"""Caption-quality and answer-accuracy metrics.

* :func:`bleu` -- sentence BLEU-4 with add-one smoothing for empty n>=2 matches.
* :func:`meteor_lite` -- exact-match METEOR (alpha=0.9, beta=3, gamma=0.5).
* :func:`cider` -- plain CIDEr (TF-IDF cosine, averaged over n=1..4, x10).
* :func:`score_answers` -- single/multi/pooled accuracy percentages.
"""
from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np

from .vqa import AnswerKey, QaItem, QuestionKind

log = logging.getLogger(__name__)

TokenSeq = tuple[str, ...]

_PUNCT = re.compile(r"""([.,:;!?'"()])""")

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
CIDER_SCALE = 10.0


def tokenize(text: str) -> TokenSeq:
    """Lowercase, split on whitespace, and split off ``.,:;!?'"()`` as tokens."""
    out: list[str] = []
    for chunk in text.lower().split():
        out.extend(t for t in _PUNCT.split(chunk) if t)
    return tuple(out)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    if not references:
        raise ValueError("bleu needs at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, k in ngrams(ref, n).items():
                if k > max_ref[g]:
                    max_ref[g] = k
        matches = sum(min(k, max_ref[g]) for g, k in cand.items())
        total = max(c - n + 1, 0)
        if matches == 0:
            if n == 1:
                return 0.0
            matches, total = 1, total + 1
        log_sum += math.log(matches / total)
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def _align(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """Maximum exact-match unigram alignment, built greedily from the longest common runs.

    Every step aligns the longest run of still-unaligned equal tokens
    (earliest in the candidate, then the reference, on ties), which keeps the
    number of matches maximal and the number of chunks small.
    """
    vocab: dict[str, int] = {}
    cid = np.array([vocab.setdefault(t, len(vocab)) for t in candidate], dtype=np.int64)
    rid = np.array([vocab.get(t, -1) for t in reference], dtype=np.int64)
    n, m = len(cid), len(rid)
    eq = cid[:, None] == rid[None, :]
    free_c = np.ones(n, dtype=bool)
    free_r = np.ones(m, dtype=bool)
    pairs: list[tuple[int, int]] = []
    while True:
        avail = eq & free_c[:, None] & free_r[None, :]
        if not avail.any():
            break
        run = np.zeros((n + 1, m + 1), dtype=np.int64)
        for i in range(n):
            run[i + 1, 1:] = np.where(avail[i], run[i, :-1] + 1, 0)
        best = int(run.max())
        if best == 1:
            # only isolated matches remain: pair them in order per token type
            for i in np.flatnonzero(free_c):
                cols = np.flatnonzero(avail[i] & free_r)
                if cols.size:
                    j = int(cols[0])
                    pairs.append((int(i), j))
                    free_c[i] = False
                    free_r[j] = False
            break
        # run[i+1, j+1] is the run length ending at (i, j); pick the earliest start
        ends = np.argwhere(run == best)
        starts = ends - best
        i0, j0 = min(map(tuple, starts))
        for k in range(best):
            pairs.append((int(i0 + k), int(j0 + k)))
        free_c[i0:i0 + best] = False
        free_r[j0:j0 + best] = False
    pairs.sort()
    return pairs


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in sorted(pairs):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _meteor_single(candidate: Sequence[str], reference: Sequence[str]) -> float:
    if not candidate or not reference:
        return 0.0
    pairs = _align(candidate, reference)
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(candidate)
    recall = matches / len(reference)
    f_mean = precision * recall / (METEOR_ALPHA * precision + (1 - METEOR_ALPHA) * recall)
    penalty = METEOR_GAMMA * (count_chunks(pairs) / matches) ** METEOR_BETA
    return f_mean * (1 - penalty)


def meteor_lite(candidate: Sequence[str], reference: Sequence[str] | Sequence[Sequence[str]]) -> float:
    """Exact-match METEOR; with several references the best score is taken."""
    if reference and not isinstance(reference[0], str):
        return max((_meteor_single(candidate, r) for r in reference), default=0.0)
    return _meteor_single(candidate, reference)


class CiderScorer:
    """Plain CIDEr with document frequencies fixed from a reference corpus."""

    def __init__(self, corpus_refs: Sequence[Sequence[Sequence[str]]], max_n: int = 4):
        if not corpus_refs:
            raise ValueError("CIDEr needs a non-empty reference corpus")
        self.max_n = max_n
        self.n_docs = len(corpus_refs)
        self.df: Counter = Counter()
        for refs in corpus_refs:
            seen = set()
            for ref in refs:
                for n in range(1, max_n + 1):
                    seen.update(ngrams(ref, n))
            self.df.update(seen)
        self.log_n = math.log(float(self.n_docs))

    def _vec(self, tokens: Sequence[str], n: int) -> tuple[dict, float]:
        counts = ngrams(tokens, n)
        vec = {g: k * (self.log_n - math.log(max(1.0, self.df[g]))) for g, k in counts.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        return vec, norm

    def score(self, candidate: Sequence[str], references: Sequence[Sequence[str]]) -> float:
        if not references:
            raise ValueError("CIDEr needs at least one reference")
        total = 0.0
        for n in range(1, self.max_n + 1):
            cvec, cnorm = self._vec(candidate, n)
            acc = 0.0
            for ref in references:
                rvec, rnorm = self._vec(ref, n)
                if cnorm == 0.0 or rnorm == 0.0:
                    continue
                dot = sum(v * rvec.get(g, 0.0) for g, v in cvec.items())
                acc += dot / (cnorm * rnorm)
            total += acc / len(references)
        return CIDER_SCALE * total / self.max_n


def cider(candidate: Sequence[str], references: Sequence[Sequence[str]],
          corpus_refs: Sequence[Sequence[Sequence[str]]], max_n: int = 4) -> float:
    return CiderScorer(corpus_refs, max_n).score(candidate, references)


@dataclass(frozen=True)
class MetricScores:
    bleu: float
    meteor: float
    cider: float


@dataclass(frozen=True)
class CorpusScores:
    per_item: dict[str, MetricScores]
    mean: MetricScores

    def to_json(self) -> dict:
        return {
            "n_items": len(self.per_item),
            "mean": asdict(self.mean),
            "per_item": {k: asdict(self.per_item[k]) for k in sorted(self.per_item)},
        }


class IdMismatchError(ValueError):
    pass


def score_corpus(candidates: Mapping[str, str], references: Mapping[str, Sequence[str] | str]) -> CorpusScores:
    """Per-item BLEU / METEOR-lite / CIDEr plus arithmetic means."""
    missing = sorted(set(references) - set(candidates))
    extra = sorted(set(candidates) - set(references))
    if missing or extra:
        raise IdMismatchError(f"candidate/reference ids differ: missing candidates {missing}, "
                              f"unknown candidates {extra}")
    refs_tok = {}
    for k in sorted(references):
        refs = references[k]
        refs_tok[k] = [tokenize(refs)] if isinstance(refs, str) else [tokenize(r) for r in refs]
    if not refs_tok:
        return CorpusScores({}, MetricScores(0.0, 0.0, 0.0))
    scorer = CiderScorer([refs_tok[k] for k in sorted(refs_tok)])
    per_item = {}
    for k in sorted(refs_tok):
        cand = tokenize(candidates[k])
        per_item[k] = MetricScores(
            bleu=bleu(cand, refs_tok[k]),
            meteor=meteor_lite(cand, refs_tok[k]),
            cider=scorer.score(cand, refs_tok[k]),
        )
    n = len(per_item)
    mean = MetricScores(
        bleu=math.fsum(s.bleu for s in per_item.values()) / n,
        meteor=math.fsum(s.meteor for s in per_item.values()) / n,
        cider=math.fsum(s.cider for s in per_item.values()) / n,
    )
    return CorpusScores(per_item, mean)


_LETTER = re.compile(r"\b([A-E])\b")
_LETTER_ANY_CASE = re.compile(r"\b([A-E])\b", re.IGNORECASE)
_ANSWER_MARK = re.compile(r"\banswers?\s*(?:is|are)?\s*[:=]", re.IGNORECASE)


def extract_letters(response: str | None) -> list[str]:
    """Option letters named by a free-form answer, uppercased and deduplicated in order.

    Text after the last ``Answer:`` marker is read case-insensitively; without
    a marker only uppercase standalone letters count, so the article "a" in
    prose is not taken for option A.
    """
    if not response:
        return []
    marks = list(_ANSWER_MARK.finditer(response))
    if marks:
        matches = _LETTER_ANY_CASE.finditer(response[marks[-1].end():])
    else:
        matches = _LETTER.finditer(response)
    out: list[str] = []
    for m in matches:
        letter = m.group(1).upper()
        if letter not in out:
            out.append(letter)
    return out


def round1(value: float) -> float:
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class AccuracyReport:
    a_s_r: int
    a_s_t: int
    a_m_r: int
    a_m_t: int

    def __post_init__(self):
        if not (0 <= self.a_s_r <= self.a_s_t and 0 <= self.a_m_r <= self.a_m_t):
            raise ValueError(f"inconsistent accuracy counts {self}")

    @property
    def prec_s(self) -> float:
        return 100.0 * self.a_s_r / self.a_s_t if self.a_s_t else 0.0

    @property
    def prec_m(self) -> float:
        return 100.0 * self.a_m_r / self.a_m_t if self.a_m_t else 0.0

    @property
    def prec_a(self) -> float:
        total = self.a_s_t + self.a_m_t
        return 100.0 * (self.a_s_r + self.a_m_r) / total if total else 0.0

    def pooling_residual(self) -> float:
        """prec_a*(s_t+m_t) - (prec_s*s_t + prec_m*m_t); zero up to round-off."""
        return self.prec_a * (self.a_s_t + self.a_m_t) - (self.prec_s * self.a_s_t + self.prec_m * self.a_m_t)

    def to_json(self) -> dict:
        return {
            "a_s_r": self.a_s_r, "a_s_t": self.a_s_t, "a_m_r": self.a_m_r, "a_m_t": self.a_m_t,
            "prec_s": self.prec_s, "prec_m": self.prec_m, "prec_a": self.prec_a,
            "prec_s_rounded": round1(self.prec_s), "prec_m_rounded": round1(self.prec_m),
            "prec_a_rounded": round1(self.prec_a),
        }


def score_answers(responses: Mapping[str, str], key: AnswerKey, items: Iterable[QaItem]) -> AccuracyReport:
    """Exact-set grading of free-form answers; no partial credit."""
    kinds = {it.item_id: it.kind for it in items}
    missing = sorted(set(key.answers) - set(kinds))
    if missing:
        raise IdMismatchError(f"answer key items absent from the question list: {missing[:10]}")
    for item_id in sorted(set(responses) - set(key.answers)):
        log.warning("ignoring response for unknown item %s", item_id)
    counts = {QuestionKind.SINGLE: [0, 0], QuestionKind.MULTI: [0, 0]}
    for item_id, truth in key.answers.items():
        kind = kinds[item_id]
        got = extract_letters(responses.get(item_id))
        counts[kind][1] += 1
        if set(got) == set(truth) and len(got) == len(truth):
            counts[kind][0] += 1
    s, m = counts[QuestionKind.SINGLE], counts[QuestionKind.MULTI]
    return AccuracyReport(a_s_r=s[0], a_s_t=s[1], a_m_r=m[0], a_m_t=m[1])


def random_guess_baseline(items: Iterable[QaItem]) -> float:
    """Expected pooled accuracy (percent) of a uniformly random valid answer."""
    probs = []
    for it in items:
        n = len(it.options)
        if it.kind is QuestionKind.SINGLE:
            probs.append(1.0 / n)
        else:
            # uniform over subsets of size 2..n-1
            n_subsets = sum(math.comb(n, k) for k in range(2, n))
            probs.append(1.0 / n_subsets)
    return 100.0 * sum(probs) / len(probs) if probs else 0.0
