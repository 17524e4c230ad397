"""Diagram object model shared by the parser, generator, renderer and question forge.

Two diagram families are modeled: flowcharts (``FlowchartGraph``) and
signal/sequence diagrams (``SequenceDiagram``).  Both are wrapped in a
``DiagramAst`` that carries the diagram id.  All objects are frozen; every
function in this module is pure.
"""
from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

ID_PATTERN = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
FORBIDDEN_LABEL_CHARS = frozenset("]})|")
# ids that collide with statement keywords of the Mermaid subset
RESERVED_IDS = frozenset({
    "end", "participant", "subgraph", "style", "classDef", "class", "click", "linkStyle", "direction",
})


class NodeShape(Enum):
    TERMINAL = "terminal"
    PROCESS = "process"
    DECISION = "decision"


class Direction(Enum):
    TOP_DOWN = "TD"
    LEFT_RIGHT = "LR"


class Arrow(Enum):
    SOLID = "solid"
    DASHED = "dashed"


class DiagramKind(Enum):
    FLOWCHART = "flowchart"
    SEQUENCE = "sequence"


@dataclass(frozen=True)
class FlowNode:
    id: str
    label: str
    shape: NodeShape


@dataclass(frozen=True)
class FlowEdge:
    src: str
    dst: str
    label: str | None = None


@dataclass(frozen=True)
class FlowchartGraph:
    direction: Direction
    nodes: tuple[FlowNode, ...]
    edges: tuple[FlowEdge, ...]

    def node(self, node_id: str) -> FlowNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


@dataclass(frozen=True)
class Participant:
    id: str
    display_name: str


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    label: str
    arrow: Arrow
    seq_index: int

    @property
    def is_self(self) -> bool:
        return self.sender == self.receiver


@dataclass(frozen=True)
class SequenceDiagram:
    participants: tuple[Participant, ...]
    messages: tuple[Message, ...]

    def participant(self, pid: str) -> Participant:
        for p in self.participants:
            if p.id == pid:
                return p
        raise KeyError(pid)


Diagram = Union[FlowchartGraph, SequenceDiagram]


@dataclass(frozen=True)
class DiagramAst:
    diagram_id: str
    body: Diagram

    @property
    def kind(self) -> DiagramKind:
        if isinstance(self.body, FlowchartGraph):
            return DiagramKind.FLOWCHART
        return DiagramKind.SEQUENCE

    def labels(self) -> list[str]:
        """Every text item the diagram displays, as a multiset (list)."""
        body = self.body
        if isinstance(body, FlowchartGraph):
            out = [n.label for n in body.nodes]
            out.extend(e.label for e in body.edges if e.label is not None)
            return out
        out = [p.display_name for p in body.participants]
        out.extend(m.label for m in body.messages)
        return out


@dataclass(frozen=True)
class Violation:
    """One broken invariant: ``rule`` is a stable slug, ``element`` the offending id."""

    rule: str
    element: str
    detail: str

    def __str__(self) -> str:
        return f"{self.rule} [{self.element}]: {self.detail}"


class InvalidDiagramError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        summary = "; ".join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"invalid diagram: {summary}{more}")


def _check_label(text: str | None, element: str, what: str, out: list[Violation]) -> None:
    if text is None or text == "":
        out.append(Violation("empty-label", element, f"{what} is empty"))
        return
    if text != text.strip():
        out.append(Violation("label-whitespace", element, f"{what} {text!r} has surrounding whitespace"))
    if "\n" in text or "\r" in text:
        out.append(Violation("label-newline", element, f"{what} contains a line break"))
    bad = sorted(set(text) & FORBIDDEN_LABEL_CHARS)
    if bad:
        out.append(Violation("label-chars", element, f"{what} {text!r} contains {''.join(bad)!r}"))


def _check_id(ident: str, out: list[Violation]) -> None:
    if not ID_PATTERN.match(ident):
        out.append(Violation("bad-id", ident, f"id {ident!r} does not match [A-Za-z][A-Za-z0-9_]*"))
    elif ident in RESERVED_IDS:
        out.append(Violation("reserved-id", ident, f"id {ident!r} is a reserved keyword"))


def _validate_flowchart(g: FlowchartGraph) -> list[Violation]:
    out: list[Violation] = []
    seen: dict[str, FlowNode] = {}
    for n in g.nodes:
        _check_id(n.id, out)
        if n.id in seen:
            out.append(Violation("duplicate-id", n.id, "node id declared more than once"))
        seen[n.id] = n
        _check_label(n.label, n.id, "node label", out)

    succ: dict[str, list[FlowEdge]] = defaultdict(list)
    indeg: dict[str, int] = defaultdict(int)
    triples = set()
    for i, e in enumerate(g.edges):
        where = f"edge[{i}]"
        if e.src not in seen:
            out.append(Violation("unknown-node", e.src, f"{where} source {e.src!r} is not a node"))
        if e.dst not in seen:
            out.append(Violation("unknown-node", e.dst, f"{where} target {e.dst!r} is not a node"))
        if e.label is not None:
            _check_label(e.label, where, "edge label", out)
            if e.src in seen and seen[e.src].shape is not NodeShape.DECISION:
                out.append(Violation("label-on-non-decision", where,
                                     f"edge from non-decision {e.src!r} carries label {e.label!r}"))
        key = (e.src, e.dst, e.label)
        if key in triples:
            out.append(Violation("duplicate-edge", where, f"duplicate edge {e.src}->{e.dst} ({e.label})"))
        triples.add(key)
        if e.src in seen and e.dst in seen:
            succ[e.src].append(e)
            indeg[e.dst] += 1

    terminals = [n for n in g.nodes if n.shape is NodeShape.TERMINAL]
    starts = [n for n in terminals if indeg[n.id] == 0]
    ends = [n for n in terminals if not succ[n.id] and indeg[n.id] > 0]
    if len(starts) != 1:
        ids = ",".join(n.id for n in starts) or "-"
        out.append(Violation("start-terminal", ids,
                             f"expected exactly one terminal without incoming edges, found {len(starts)}"))

    for n in g.nodes:
        out_edges = succ[n.id]
        if n.shape is NodeShape.TERMINAL:
            if indeg[n.id] == 0 and len(out_edges) != 1:
                out.append(Violation("start-out-degree", n.id, "start terminal must have exactly one outgoing edge"))
            if indeg[n.id] > 0 and out_edges:
                out.append(Violation("end-out-degree", n.id, "end terminal must have no outgoing edges"))
        elif n.shape is NodeShape.PROCESS:
            if len(out_edges) != 1:
                out.append(Violation("process-out-degree", n.id,
                                     f"process node has {len(out_edges)} outgoing edges, expected 1"))
        else:
            labels = [e.label for e in out_edges]
            if len(out_edges) < 2:
                out.append(Violation("decision-branches", n.id, "decision node needs at least 2 outgoing edges"))
            if any(lbl is None for lbl in labels) or len(set(labels)) != len(labels):
                out.append(Violation("decision-branch-labels", n.id,
                                     "decision branches must carry pairwise-distinct labels"))

    if len(starts) == 1:
        start = starts[0].id
        reached = {start}
        stack = [start]
        while stack:
            cur = stack.pop()
            for e in succ[cur]:
                if e.dst not in reached:
                    reached.add(e.dst)
                    stack.append(e.dst)
        for n in g.nodes:
            if n.id not in reached:
                out.append(Violation("unreachable", n.id, "node is not reachable from the start terminal"))
        if not any(n.id in reached for n in ends):
            out.append(Violation("no-end", start, "no end terminal reachable from the start terminal"))
    elif not ends:
        out.append(Violation("no-end", "-", "no end terminal reachable"))
    return out


def _validate_sequence(d: SequenceDiagram) -> list[Violation]:
    out: list[Violation] = []
    ids: set[str] = set()
    names: set[str] = set()
    for p in d.participants:
        _check_id(p.id, out)
        if p.id in ids:
            out.append(Violation("duplicate-id", p.id, "participant declared more than once"))
        ids.add(p.id)
        _check_label(p.display_name, p.id, "participant name", out)
        if p.display_name in names:
            out.append(Violation("duplicate-name", p.id, f"display name {p.display_name!r} is not unique"))
        names.add(p.display_name)
    if len(d.participants) < 2:
        out.append(Violation("too-few-participants", "-", "a signal diagram needs at least 2 participants"))
    if not d.messages:
        out.append(Violation("no-messages", "-", "a signal diagram needs at least 1 message"))

    used: set[str] = set()
    for i, m in enumerate(d.messages):
        where = f"message[{i}]"
        if m.seq_index != i:
            out.append(Violation("seq-index", where, f"seq_index {m.seq_index} does not match position {i}"))
        for end in (m.sender, m.receiver):
            if end not in ids:
                out.append(Violation("unknown-participant", end, f"{where} references unknown participant {end!r}"))
            used.add(end)
        _check_label(m.label, where, "message label", out)
    for p in d.participants:
        if p.id not in used:
            out.append(Violation("idle-participant", p.id, "participant neither sends nor receives a message"))
    return out


def validate(ast: DiagramAst) -> list[Violation]:
    """Return every invariant violation of ``ast``; an empty list means valid.

    Violations are reported in a deterministic order (declaration order of the
    offending elements, grouped by check).
    """
    if isinstance(ast.body, FlowchartGraph):
        return _validate_flowchart(ast.body)
    if isinstance(ast.body, SequenceDiagram):
        return _validate_sequence(ast.body)
    return [Violation("bad-body", ast.diagram_id, f"unsupported diagram body {type(ast.body).__name__}")]


def require_valid(ast: DiagramAst) -> None:
    problems = validate(ast)
    if problems:
        raise InvalidDiagramError(problems)


@dataclass(frozen=True)
class OracleFacts:
    """Ground-truth structure extracted by exhaustive traversal."""

    successors: dict[str, tuple[str, ...]] = field(default_factory=dict)
    predecessors: dict[str, tuple[str, ...]] = field(default_factory=dict)
    branch_targets: dict[tuple[str, str], str] = field(default_factory=dict)
    start: str | None = None
    sent: dict[str, int] = field(default_factory=dict)
    received: dict[str, int] = field(default_factory=dict)
    involved: dict[str, int] = field(default_factory=dict)
    messages_by_participant: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def successor_set(self, node_id: str) -> set[str]:
        return set(self.successors.get(node_id, ()))

    def branch_target(self, node_id: str, branch: str) -> str:
        return self.branch_targets[(node_id, branch)]


def graph_oracle(ast: DiagramAst) -> OracleFacts:
    """Extract successor/predecessor maps or per-participant message facts.

    Successor lists keep edge declaration order; a node reached by two
    edges from the same source (different branch labels) appears twice.
    """
    require_valid(ast)
    body = ast.body
    if isinstance(body, FlowchartGraph):
        succ: dict[str, list[str]] = {n.id: [] for n in body.nodes}
        pred: dict[str, list[str]] = {n.id: [] for n in body.nodes}
        branches: dict[tuple[str, str], str] = {}
        for e in body.edges:
            succ[e.src].append(e.dst)
            pred[e.dst].append(e.src)
            if e.label is not None:
                branches[(e.src, e.label)] = e.dst
        start = next(n.id for n in body.nodes if n.shape is NodeShape.TERMINAL and not pred[n.id])
        return OracleFacts(
            successors={k: tuple(v) for k, v in succ.items()},
            predecessors={k: tuple(v) for k, v in pred.items()},
            branch_targets=branches,
            start=start,
        )

    sent = {p.id: 0 for p in body.participants}
    received = {p.id: 0 for p in body.participants}
    involved = {p.id: 0 for p in body.participants}
    per: dict[str, list[int]] = {p.id: [] for p in body.participants}
    for m in body.messages:
        sent[m.sender] += 1
        received[m.receiver] += 1
        involved[m.sender] += 1
        per[m.sender].append(m.seq_index)
        if not m.is_self:
            involved[m.receiver] += 1
            per[m.receiver].append(m.seq_index)
    return OracleFacts(
        sent=sent,
        received=received,
        involved=involved,
        messages_by_participant={k: tuple(v) for k, v in per.items()},
    )


def flow_order(graph: FlowchartGraph) -> list[str]:
    """Depth-first preorder from the start terminal; branches in edge declaration order."""
    succ: dict[str, list[str]] = defaultdict(list)
    indeg: dict[str, int] = defaultdict(int)
    for e in graph.edges:
        succ[e.src].append(e.dst)
        indeg[e.dst] += 1
    start = next(n.id for n in graph.nodes if n.shape is NodeShape.TERMINAL and indeg[n.id] == 0)
    order: list[str] = []
    seen: set[str] = set()
    stack = [start]
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        order.append(cur)
        for nxt in reversed(succ[cur]):
            if nxt not in seen:
                stack.append(nxt)
    return order
