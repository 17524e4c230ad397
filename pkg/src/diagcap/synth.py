"""Seeded generation of flowcharts and signal diagrams.

Generation is a pure function of :class:`GenConfig`.  Randomness comes only
from :class:`~diagcap.rng.SplitMix64`; per-diagram seeds of a corpus are
``derive_seed(template.seed, index)``.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import (
    ID_PATTERN,
    RESERVED_IDS,
    Arrow,
    DiagramAst,
    DiagramKind,
    Direction,
    FlowchartGraph,
    FlowEdge,
    FlowNode,
    Message,
    NodeShape,
    Participant,
    SequenceDiagram,
    FORBIDDEN_LABEL_CHARS,
    validate,
)
from .rng import SplitMix64, derive_seed

MAX_ATTEMPTS = 100
DASHED_PROBABILITY = 0.35
CURSOR_PROBABILITY = 0.6


class ConfigError(ValueError):
    """A configuration value is missing, malformed or impossible."""


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabelVocabulary:
    id: str
    terminals: tuple[str, ...]
    actions: tuple[str, ...]
    conditions: tuple[str, ...]
    branch_labels: tuple[tuple[str, str], ...]
    participants_names: tuple[str, ...]
    message_labels: tuple[str, ...]

    def check(self) -> None:
        for name in ("terminals", "actions", "conditions", "branch_labels", "participants_names", "message_labels"):
            if not getattr(self, name):
                raise ConfigError(f"vocabulary {self.id!r}: section {name!r} is empty")
        phrases = [*self.terminals, *self.actions, *self.conditions, *self.participants_names, *self.message_labels]
        phrases.extend(x for pair in self.branch_labels for x in pair)
        for phrase in phrases:
            if not phrase or phrase != phrase.strip() or set(phrase) & FORBIDDEN_LABEL_CHARS or "\n" in phrase:
                raise ConfigError(f"vocabulary {self.id!r}: phrase {phrase!r} is not a valid label")
        for left, right in self.branch_labels:
            if left == right:
                raise ConfigError(f"vocabulary {self.id!r}: branch pair {left!r} repeats its label")
        if len(set(self.participants_names)) != len(self.participants_names):
            raise ConfigError(f"vocabulary {self.id!r}: participant names must be unique")

    def vocabulary_set(self) -> set[str]:
        out = {*self.terminals, *self.actions, *self.conditions, *self.participants_names, *self.message_labels}
        out.update(x for pair in self.branch_labels for x in pair)
        return out


_VOCAB_FIELDS = ("terminals", "actions", "conditions", "branch_labels", "participants_names", "message_labels")


def parse_vocabulary(text: str, vocab_id: str) -> LabelVocabulary:
    """Parse the sectioned plain-text vocabulary format (see ``data/ict_default.vocab``)."""
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            current = m.group(1)
            if current not in _VOCAB_FIELDS:
                raise ConfigError(f"vocabulary {vocab_id!r} line {lineno}: unknown section {current!r}")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ConfigError(f"vocabulary {vocab_id!r} line {lineno}: phrase outside any section")
        sections[current].append(line)

    pairs = []
    for entry in sections.get("branch_labels", []):
        parts = [p.strip() for p in entry.split("|")]
        if len(parts) != 2:
            raise ConfigError(f"vocabulary {vocab_id!r}: branch label entry {entry!r} needs 'left | right'")
        pairs.append((parts[0], parts[1]))
    vocab = LabelVocabulary(
        id=vocab_id,
        terminals=tuple(sections.get("terminals", ())),
        actions=tuple(sections.get("actions", ())),
        conditions=tuple(sections.get("conditions", ())),
        branch_labels=tuple(pairs),
        participants_names=tuple(sections.get("participants_names", ())),
        message_labels=tuple(sections.get("message_labels", ())),
    )
    vocab.check()
    return vocab


_REGISTRY: dict[str, LabelVocabulary] = {}


def get_vocabulary(vocab_id: str) -> LabelVocabulary:
    if vocab_id not in _REGISTRY:
        if vocab_id != "ict-default":
            raise ConfigError(f"unknown label vocabulary {vocab_id!r}")
        text = resources.files("diagcap").joinpath("data/ict_default.vocab").read_text(encoding="utf-8")
        _REGISTRY[vocab_id] = parse_vocabulary(text, vocab_id)
    return _REGISTRY[vocab_id]


def load_vocabulary(path: str | Path, vocab_id: str | None = None) -> LabelVocabulary:
    """Load a vocabulary file and register it (id defaults to the file stem)."""
    path = Path(path)
    vocab = parse_vocabulary(path.read_text(encoding="utf-8"), vocab_id or path.stem)
    _REGISTRY[vocab.id] = vocab
    return vocab


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    kind: DiagramKind = DiagramKind.FLOWCHART
    node_count_range: tuple[int, int] = (4, 10)
    decision_probability: float = 0.35
    merge_probability: float = 0.25
    participant_count_range: tuple[int, int] = (3, 6)
    message_count_range: tuple[int, int] = (4, 10)
    skip_over_probability: float = 0.2
    label_vocabulary: str = "ict-default"
    direction: Direction = Direction.TOP_DOWN

    def check(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed {self.seed} is not a 64-bit unsigned integer")
        for name in ("node_count_range", "participant_count_range", "message_count_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: empty range {lo}..{hi}")
        for name in ("decision_probability", "merge_probability", "skip_over_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}: {p} is not in [0, 1]")
        vocab = get_vocabulary(self.label_vocabulary)
        if self.kind is DiagramKind.FLOWCHART:
            if self.node_count_range[0] < 3:
                raise ConfigError(f"node_count_range: minimum {self.node_count_range[0]} < 3 (start, step, end)")
        else:
            lo_p, hi_p = self.participant_count_range
            if lo_p < 2:
                raise ConfigError(f"participant_count_range: minimum {lo_p} < 2")
            if hi_p > len(vocab.participants_names):
                raise ConfigError(
                    f"participant_count_range: maximum {hi_p} exceeds the "
                    f"{len(vocab.participants_names)} names of vocabulary {vocab.id!r}")
            lo_m = self.message_count_range[0]
            if lo_m < 1 or 2 * lo_m < hi_p:
                raise ConfigError(
                    f"message_count_range: minimum {lo_m} cannot involve up to {hi_p} participants")


def _parse_range(key: str, value: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", value)
    if not m:
        raise ConfigError(f"{key}: expected 'lo..hi' or an integer, got {value!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) is not None else lo
    return lo, hi


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value, 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def gen_config_from_mapping(values: dict[str, str], base: GenConfig | None = None) -> GenConfig:
    """Build a GenConfig from string key/value pairs (INI section semantics)."""
    cfg = base or GenConfig()
    updates: dict = {}
    for key, value in values.items():
        if key == "seed":
            updates[key] = _parse_int(key, value)
        elif key == "kind":
            try:
                updates[key] = DiagramKind(value.strip().lower())
            except ValueError:
                raise ConfigError(f"kind: expected flowchart or sequence, got {value!r}") from None
        elif key in ("node_count_range", "participant_count_range", "message_count_range"):
            updates[key] = _parse_range(key, value)
        elif key in ("decision_probability", "merge_probability", "skip_over_probability"):
            updates[key] = _parse_float(key, value)
        elif key == "label_vocabulary":
            updates[key] = value.strip()
        elif key == "direction":
            try:
                updates[key] = Direction(value.strip().upper())
            except ValueError:
                raise ConfigError(f"direction: expected TD or LR, got {value!r}") from None
        else:
            raise ConfigError(f"unknown generator key {key!r}")
    return dataclasses.replace(cfg, **updates)


def load_gen_config(path: str | Path, section: str = "generator") -> GenConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(Path(path).read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section(section):
        raise ConfigError(f"{path}: missing [{section}] section")
    cfg = gen_config_from_mapping(dict(parser.items(section)))
    cfg.check()
    return cfg


class _Pool:
    """Draws phrases without replacement until exhausted, then reshuffles."""

    def __init__(self, phrases, rng: SplitMix64):
        self.phrases = list(phrases)
        self.rng = rng
        self.queue: list = []

    def draw(self):
        if not self.queue:
            self.queue = list(self.phrases)
            self.rng.shuffle(self.queue)
        return self.queue.pop()


def _flowchart_attempt(cfg: GenConfig, vocab: LabelVocabulary, rng: SplitMix64) -> FlowchartGraph:
    n = rng.randint(*cfg.node_count_range)
    actions = _Pool(vocab.actions, rng)
    conditions = _Pool(vocab.conditions, rng)
    start_label, end_label = rng.sample(vocab.terminals, 2) if len(vocab.terminals) > 1 else (
        vocab.terminals[0], vocab.terminals[0])

    nodes = [FlowNode("N0", start_label, NodeShape.TERMINAL)]
    edges: list[FlowEdge] = []
    inner: list[str] = []
    budget = n - 2
    open_branches: list[tuple[str, str | None]] = [("N0", None)]
    end_id = None
    while open_branches:
        src, branch = open_branches.pop()
        if budget > 0:
            targets = [t for t in inner if t != src]
            if open_branches and targets and rng.chance(cfg.merge_probability):
                edges.append(FlowEdge(src, rng.choice(targets), branch))
                continue
            node_id = f"N{len(nodes)}"
            if rng.chance(cfg.decision_probability):
                nodes.append(FlowNode(node_id, conditions.draw(), NodeShape.DECISION))
                left, right = rng.choice(vocab.branch_labels)
                open_branches.append((node_id, right))
                open_branches.append((node_id, left))
            else:
                nodes.append(FlowNode(node_id, actions.draw(), NodeShape.PROCESS))
                open_branches.append((node_id, None))
            edges.append(FlowEdge(src, node_id, branch))
            inner.append(node_id)
            budget -= 1
        else:
            if end_id is None:
                end_id = f"N{len(nodes)}"
                nodes.append(FlowNode(end_id, end_label, NodeShape.TERMINAL))
            edges.append(FlowEdge(src, end_id, branch))
    return FlowchartGraph(cfg.direction, tuple(nodes), tuple(edges))


def _participant_id(name: str, index: int) -> str:
    if ID_PATTERN.match(name) and name not in RESERVED_IDS:
        return name
    return f"P{index}"


def _pick_receiver(a: int, p: int, skip: bool, rng: SplitMix64, prefer: list[int] | None = None) -> int:
    if skip:
        far = [j for j in (prefer or []) if abs(j - a) >= 2] or [j for j in range(p) if abs(j - a) >= 2]
        return rng.choice(far) if far else a
    if prefer:
        near = [j for j in prefer if abs(j - a) == 1]
        return rng.choice(near or prefer)
    near = [j for j in (a - 1, a + 1) if 0 <= j < p]
    return rng.choice(near)


def _sequence_attempt(cfg: GenConfig, vocab: LabelVocabulary, rng: SplitMix64) -> SequenceDiagram:
    p = rng.randint(*cfg.participant_count_range)
    m = rng.randint(*cfg.message_count_range)
    chosen = sorted(rng.sample(range(len(vocab.participants_names)), p))
    names = [vocab.participants_names[i] for i in chosen]
    participants = tuple(Participant(_participant_id(name, i), name) for i, name in enumerate(names))
    labels = _Pool(vocab.message_labels, rng)

    used = [False] * p
    cursor = 0
    messages = []
    for k in range(m):
        uncovered = [i for i in range(p) if not used[i]]
        remaining = m - k
        skip = rng.chance(cfg.skip_over_probability)
        if uncovered and (len(uncovered) + 1) // 2 >= remaining:
            a = uncovered[0]
            b = _pick_receiver(a, p, skip, rng, prefer=uncovered[1:] or None)
        else:
            a = cursor if rng.chance(CURSOR_PROBABILITY) else rng.below(p)
            b = _pick_receiver(a, p, skip, rng)
        if rng.chance(0.5) and a != b and not (uncovered and (len(uncovered) + 1) // 2 >= remaining):
            a, b = b, a
        used[a] = used[b] = True
        cursor = b
        arrow = Arrow.DASHED if rng.chance(DASHED_PROBABILITY) else Arrow.SOLID
        messages.append(Message(participants[a].id, participants[b].id, labels.draw(), arrow, k))
    return SequenceDiagram(participants, tuple(messages))


def generate(cfg: GenConfig, diagram_id: str = "diagram") -> DiagramAst:
    """Generate one valid diagram; the result depends only on ``cfg`` and ``diagram_id``."""
    cfg.check()
    vocab = get_vocabulary(cfg.label_vocabulary)
    for attempt in range(MAX_ATTEMPTS):
        rng = SplitMix64(cfg.seed if attempt == 0 else derive_seed(cfg.seed, attempt))
        if cfg.kind is DiagramKind.FLOWCHART:
            body = _flowchart_attempt(cfg, vocab, rng)
        else:
            body = _sequence_attempt(cfg, vocab, rng)
        ast = DiagramAst(diagram_id, body)
        if not validate(ast):
            return ast
    raise GenerationError(f"no valid diagram after {MAX_ATTEMPTS} attempts for config {cfg}")


@dataclass(frozen=True)
class CorpusEntry:
    diagram_id: str
    kind: DiagramKind
    seed: int
    index: int

    def to_json(self) -> dict:
        return {"diagram_id": self.diagram_id, "kind": self.kind.value, "seed": self.seed, "index": self.index}


def generate_corpus(
    template: GenConfig,
    count_flowcharts: int,
    count_sequences: int,
    id_prefix: str = "d",
) -> tuple[list[DiagramAst], list[CorpusEntry]]:
    """Generate ``count_flowcharts`` flowcharts followed by ``count_sequences`` signal diagrams.

    Diagram ``i`` (0-based over the whole corpus) is generated from
    ``derive_seed(template.seed, i)``.
    """
    if count_flowcharts < 0 or count_sequences < 0:
        raise ConfigError("corpus counts must be non-negative")
    diagrams: list[DiagramAst] = []
    entries: list[CorpusEntry] = []
    total = count_flowcharts + count_sequences
    for i in range(total):
        kind = DiagramKind.FLOWCHART if i < count_flowcharts else DiagramKind.SEQUENCE
        seed = derive_seed(template.seed, i)
        tag = "fc" if kind is DiagramKind.FLOWCHART else "sq"
        diagram_id = f"{id_prefix}-{tag}-{i:05d}"
        cfg = dataclasses.replace(template, seed=seed, kind=kind)
        diagrams.append(generate(cfg, diagram_id))
        entries.append(CorpusEntry(diagram_id, kind, seed, i))
    return diagrams, entries
