"""Deterministic expert-style captions for diagrams.

The built-in ``ict-default`` style writes numbered procedural steps.
Flowchart steps follow a depth-first walk from the start terminal (branches
in edge declaration order); every jump that is not simply "the next step"
is spelled out as ``go to Step j``.  Signal diagrams get one step per
message in sequence order.

:func:`parse_caption` reads a caption back into a structural skeleton and is
deliberately lenient, since it also runs on free-form model output.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core import Arrow, DiagramAst, FlowchartGraph, NodeShape, flow_order, require_valid


@dataclass(frozen=True)
class CaptionStyle:
    id: str
    flowchart_title: str
    sequence_title: str
    version: int = 1


ICT_DEFAULT = CaptionStyle(
    id="ict-default",
    flowchart_title="This flowchart describes the following procedure:",
    sequence_title="This signal diagram describes the following message flow:",
)

STYLES = {ICT_DEFAULT.id: ICT_DEFAULT}


@dataclass(frozen=True)
class CaptionDoc:
    diagram_id: str
    title_line: str
    steps: tuple[str, ...]

    @property
    def full_text(self) -> str:
        return "\n".join((self.title_line, *self.steps))


def _flowchart_steps(graph: FlowchartGraph) -> list[str]:
    order = flow_order(graph)
    number = {nid: k for k, nid in enumerate(order, start=1)}
    out_edges: dict[str, list] = {nid: [] for nid in order}
    for e in graph.edges:
        out_edges[e.src].append(e)
    steps = []
    for nid in order:
        k = number[nid]
        node = graph.node(nid)
        edges = out_edges[nid]
        if node.shape is NodeShape.DECISION:
            branches = "; ".join(f"if {e.label}, go to Step {number[e.dst]}" for e in edges)
            branches = branches[0].upper() + branches[1:]
            steps.append(f"Step {k}: Check {node.label}. {branches}.")
            continue
        if node.shape is NodeShape.TERMINAL and not edges:
            steps.append(f"Step {k}: End ({node.label}).")
            continue
        text = f"Start ({node.label})." if node.shape is NodeShape.TERMINAL else f"{node.label}."
        target = number[edges[0].dst]
        if target != k + 1:
            text += f" Then go to Step {target}."
        steps.append(f"Step {k}: {text}")
    return steps


def caption(ast: DiagramAst, style: CaptionStyle = ICT_DEFAULT) -> CaptionDoc:
    require_valid(ast)
    body = ast.body
    if isinstance(body, FlowchartGraph):
        return CaptionDoc(ast.diagram_id, style.flowchart_title, tuple(_flowchart_steps(body)))
    names = {p.id: p.display_name for p in body.participants}
    steps = []
    for k, m in enumerate(body.messages, start=1):
        if m.is_self:
            text = f"{names[m.sender]} performs '{m.label}' internally"
        else:
            text = f"{names[m.sender]} sends '{m.label}' to {names[m.receiver]}"
        if m.arrow is Arrow.DASHED:
            text += " (dashed response)"
        steps.append(f"Step {k}: {text}.")
    return CaptionDoc(ast.diagram_id, style.sequence_title, tuple(steps))


@dataclass(frozen=True)
class StepInfo:
    number: int
    kind: str  # start | process | decision | end | message | internal | unknown
    text: str
    label: str | None = None
    # (branch condition or None, target step number); implicit fall-through included
    refs: tuple[tuple[str | None, int], ...] = ()
    sender: str | None = None
    receiver: str | None = None
    dashed: bool = False


@dataclass
class CaptionSkeleton:
    title: str | None = None
    steps: list[StepInfo] = field(default_factory=list)
    unrecognized: list[str] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def references(self) -> dict[int, list[int]]:
        return {s.number: [t for _, t in s.refs] for s in self.steps}


_STEP = re.compile(r"\s*Step\s+(\d+)\s*:\s*(.*?)\s*\Z")
_BRANCH = re.compile(r"if\s+(.+?),\s*go to Step\s+(\d+)", re.IGNORECASE)
_THEN = re.compile(r"\s*Then go to Step\s+(\d+)\.\s*\Z")
_DECISION = re.compile(r"Check\s+(.+?)\.\s+(If\s.+)\Z")
_END = re.compile(r"End \((.*)\)\.\Z")
_START = re.compile(r"Start \((.*?)\)\.")
_SEND = re.compile(r"(.+?) sends '(.*)' to (.+?)( \(dashed response\))?\.\Z")
_SELF = re.compile(r"(.+?) performs '(.*)' internally( \(dashed response\))?\.\Z")


def _parse_step(number: int, body: str) -> StepInfo:
    m = _DECISION.match(body)
    if m:
        refs = tuple((b.group(1).strip(), int(b.group(2))) for b in _BRANCH.finditer(m.group(2)))
        return StepInfo(number, "decision", body, m.group(1), refs)
    m = _END.match(body)
    if m:
        return StepInfo(number, "end", body, m.group(1))
    m = _SEND.match(body)
    if m:
        return StepInfo(number, "message", body, m.group(2), sender=m.group(1), receiver=m.group(3),
                        dashed=bool(m.group(4)))
    m = _SELF.match(body)
    if m:
        return StepInfo(number, "internal", body, m.group(2), sender=m.group(1), receiver=m.group(1),
                        dashed=bool(m.group(3)))
    then = _THEN.search(body)
    target = int(then.group(1)) if then else number + 1
    core = body[:then.start()] if then else body
    m = _START.match(core)
    if m:
        return StepInfo(number, "start", body, m.group(1), ((None, target),))
    if core.endswith("."):
        return StepInfo(number, "process", body, core[:-1], ((None, target),))
    return StepInfo(number, "unknown", body)


def parse_caption(text: str, style: CaptionStyle = ICT_DEFAULT) -> CaptionSkeleton:
    """Best-effort structural parse of a caption; never raises."""
    skel = CaptionSkeleton()
    if not isinstance(text, str):
        return skel
    for line in text.splitlines():
        if not line.strip():
            continue
        stripped = line.strip()
        if skel.title is None and not skel.steps and stripped in (style.flowchart_title, style.sequence_title):
            skel.title = stripped
            continue
        m = _STEP.match(line)
        if m:
            skel.steps.append(_parse_step(int(m.group(1)), m.group(2)))
        else:
            skel.unrecognized.append(line)
    return skel
