"""Parser and canonical serializer for the Mermaid subset used by the corpus.

Accepted grammar::

    flowchart TD | flowchart LR
      ID([label])            terminal
      ID[label]              process
      ID{label}              decision
      A --> B                edge (both ends declared, possibly inline)
      A -->|label| B         labeled edge

    sequenceDiagram
      participant ID [as Name]
      A->>B: label           solid message
      A-->>B: label          dashed message

``%%`` starts a comment line; blank lines are ignored.  Anything else is
rejected with a positioned diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import (
    ID_PATTERN,
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
    require_valid,
    validate,
)

INDENT = "  "

_SHAPE_DELIMS = {
    NodeShape.TERMINAL: ("([", "])"),
    NodeShape.PROCESS: ("[", "]"),
    NodeShape.DECISION: ("{", "}"),
}

_UNSUPPORTED_SEQUENCE = (
    "note", "loop", "alt", "else", "opt", "par", "and", "rect", "critical", "break",
    "activate", "deactivate", "autonumber", "actor", "box", "end", "title", "create", "destroy",
)
_UNSUPPORTED_FLOWCHART = ("subgraph", "end", "style", "classDef", "class", "click", "linkStyle", "direction")


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: Severity = Severity.ERROR

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity.value}: {self.message}"


@dataclass(frozen=True)
class MermaidSource:
    text: str
    kind_hint: DiagramKind | None = None


class MermaidParseError(ValueError):
    """Raised by :func:`parse`; carries at least one error diagnostic."""

    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class _Fail(Exception):
    def __init__(self, column: int, message: str):
        self.column = column
        self.message = message


class _LineScanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def startswith(self, token: str) -> bool:
        return self.text.startswith(token, self.pos)

    def ident(self) -> str:
        start = self.pos
        if self.at_end() or not self.text[self.pos].isascii() or not self.text[self.pos].isalpha():
            raise _Fail(start + 1, "expected an identifier")
        self.pos += 1
        while self.pos < len(self.text) and (
            self.text[self.pos].isascii() and (self.text[self.pos].isalnum() or self.text[self.pos] == "_")
        ):
            self.pos += 1
        return self.text[start:self.pos]

    def until(self, closing: str, what: str) -> tuple[str, int]:
        start = self.pos
        end = self.text.find(closing, self.pos)
        if end < 0:
            raise _Fail(start + 1, f"unterminated {what}: missing {closing!r}")
        self.pos = end + len(closing)
        return self.text[start:end], start + 1


def _check_flow_label(raw: str, col: int, shape: NodeShape | None) -> str:
    label = raw.strip()
    if not label:
        raise _Fail(col, "empty label")
    for ch in "]})|":
        if ch in label:
            raise _Fail(col + raw.index(ch), f"label may not contain {ch!r}")
    return label


def _parse_node_ref(sc: _LineScanner) -> tuple[str, int, NodeShape | None, str | None]:
    col = sc.pos + 1
    ident = sc.ident()
    if sc.startswith("(["):
        sc.pos += 2
        raw, lcol = sc.until("])", "terminal label")
        return ident, col, NodeShape.TERMINAL, _check_flow_label(raw, lcol, NodeShape.TERMINAL)
    if sc.startswith("(") or sc.startswith("[[") or sc.startswith("[(") or sc.startswith("{{") or sc.startswith(">"):
        raise _Fail(sc.pos + 1, "unsupported node shape")
    if sc.startswith("["):
        sc.pos += 1
        raw, lcol = sc.until("]", "process label")
        return ident, col, NodeShape.PROCESS, _check_flow_label(raw, lcol, NodeShape.PROCESS)
    if sc.startswith("{"):
        sc.pos += 1
        raw, lcol = sc.until("}", "decision label")
        return ident, col, NodeShape.DECISION, _check_flow_label(raw, lcol, NodeShape.DECISION)
    return ident, col, None, None


class _FlowBuilder:
    def __init__(self, direction: Direction):
        self.direction = direction
        self.nodes: dict[str, FlowNode] = {}
        self.edges: list[FlowEdge] = []
        self.node_pos: dict[str, tuple[int, int]] = {}
        self.edge_pos: list[tuple[int, int]] = []

    def declare(self, ident: str, shape: NodeShape | None, label: str | None, lineno: int, col: int) -> None:
        if shape is None:
            if ident not in self.nodes:
                raise _Fail(col, f"node {ident!r} is referenced before it is declared")
            return
        if ident in self.nodes:
            raise _Fail(col, f"duplicate node id {ident!r}")
        self.nodes[ident] = FlowNode(ident, label, shape)
        self.node_pos[ident] = (lineno, col)

    def statement(self, text: str, lineno: int) -> None:
        sc = _LineScanner(text)
        sc.skip_ws()
        first = sc.pos
        try:
            word = sc.ident()
        except _Fail:
            word = ""
        sc.pos = first
        if word in _UNSUPPORTED_FLOWCHART and (sc.pos + len(word) >= len(text) or not text[sc.pos + len(word)].isalnum()):
            raise _Fail(first + 1, f"unsupported Mermaid feature {word!r}")

        ident, col, shape, label = _parse_node_ref(sc)
        self.declare(ident, shape, label, lineno, col)
        prev = ident
        count = 0
        while True:
            sc.skip_ws()
            if sc.at_end() or sc.startswith(";"):
                break
            arrow_col = sc.pos + 1
            if not sc.startswith("-->") or sc.startswith("--->"):
                raise _Fail(arrow_col, "malformed arrow: expected '-->'")
            sc.pos += 3
            edge_label = None
            if sc.startswith("|"):
                sc.pos += 1
                raw, lcol = sc.until("|", "edge label")
                edge_label = raw.strip()
                if not edge_label:
                    raise _Fail(lcol, "empty label")
            sc.skip_ws()
            ident, col, shape, label = _parse_node_ref(sc)
            self.declare(ident, shape, label, lineno, col)
            if edge_label is not None and self.nodes[prev].shape is not NodeShape.DECISION:
                raise _Fail(arrow_col, f"edge from non-decision node {prev!r} cannot carry a label")
            self.edges.append(FlowEdge(prev, ident, edge_label))
            self.edge_pos.append((lineno, arrow_col))
            prev = ident
            count += 1
        if sc.startswith(";"):
            sc.pos += 1
            sc.skip_ws()
            if not sc.at_end():
                raise _Fail(sc.pos + 1, "unexpected text after ';'")
        if count == 0 and shape is None:
            raise _Fail(col, f"statement {ident!r} declares nothing")

    def build(self) -> FlowchartGraph:
        return FlowchartGraph(self.direction, tuple(self.nodes.values()), tuple(self.edges))

    def position_of(self, element: str) -> tuple[int, int] | None:
        if element in self.node_pos:
            return self.node_pos[element]
        if element.startswith("edge[") and element.endswith("]"):
            idx = int(element[5:-1])
            if idx < len(self.edge_pos):
                return self.edge_pos[idx]
        return None


class _SeqBuilder:
    def __init__(self):
        self.participants: dict[str, Participant] = {}
        self.messages: list[Message] = []
        self.part_pos: dict[str, tuple[int, int]] = {}
        self.msg_pos: list[tuple[int, int]] = []

    def _use(self, ident: str, lineno: int, col: int) -> None:
        if ident not in self.participants:
            self.participants[ident] = Participant(ident, ident)
            self.part_pos[ident] = (lineno, col)

    def statement(self, text: str, lineno: int) -> None:
        sc = _LineScanner(text)
        sc.skip_ws()
        first = sc.pos
        col = first + 1
        word = sc.ident()
        after = sc.pos
        if word == "participant" and (sc.at_end() or text[after] in " \t"):
            sc.skip_ws()
            pcol = sc.pos + 1
            ident = sc.ident()
            if not (sc.at_end() or text[sc.pos] in " \t"):
                raise _Fail(sc.pos + 1, "unexpected character in participant id")
            sc.skip_ws()
            name = ident
            if not sc.at_end():
                if not (sc.startswith("as") and (len(text) == sc.pos + 2 or text[sc.pos + 2] in " \t")):
                    raise _Fail(sc.pos + 1, "expected 'as <name>'")
                sc.pos += 2
                ncol = sc.pos + 1
                name = text[sc.pos:].strip()
                if not name:
                    raise _Fail(ncol, "empty label")
                _reject_chars(name, text, sc.pos)
            if ident in self.participants:
                raise _Fail(pcol, f"duplicate participant id {ident!r}")
            self.participants[ident] = Participant(ident, name)
            self.part_pos[ident] = (lineno, pcol)
            return
        if word.lower() in _UNSUPPORTED_SEQUENCE and (sc.at_end() or not (text[after].isalnum() or text[after] == "_")):
            if not (sc.startswith("->>") or sc.startswith("-->>")):
                raise _Fail(col, f"unsupported Mermaid feature {word!r}")

        sc.skip_ws()
        arrow_col = sc.pos + 1
        if sc.startswith("-->>"):
            arrow = Arrow.DASHED
            sc.pos += 4
        elif sc.startswith("->>"):
            arrow = Arrow.SOLID
            sc.pos += 3
        else:
            raise _Fail(arrow_col, "malformed arrow: expected '->>' or '-->>'")
        if sc.startswith("+") or sc.startswith("-"):
            raise _Fail(sc.pos + 1, "activation markers are not supported")
        sc.skip_ws()
        rcol = sc.pos + 1
        receiver = sc.ident()
        sc.skip_ws()
        if not sc.startswith(":"):
            raise _Fail(sc.pos + 1, "expected ':' before the message label")
        sc.pos += 1
        label = text[sc.pos:].strip()
        if not label:
            raise _Fail(sc.pos + 1, "empty label")
        _reject_chars(label, text, sc.pos)
        self._use(word, lineno, col)
        self._use(receiver, lineno, rcol)
        self.messages.append(Message(word, receiver, label, arrow, len(self.messages)))
        self.msg_pos.append((lineno, arrow_col))

    def build(self) -> SequenceDiagram:
        return SequenceDiagram(tuple(self.participants.values()), tuple(self.messages))

    def position_of(self, element: str) -> tuple[int, int] | None:
        if element in self.part_pos:
            return self.part_pos[element]
        if element.startswith("message[") and element.endswith("]"):
            idx = int(element[8:-1])
            if idx < len(self.msg_pos):
                return self.msg_pos[idx]
        return None


def _reject_chars(label: str, text: str, offset: int) -> None:
    for ch in "]})|":
        if ch in label:
            raise _Fail(text.index(ch, offset) + 1, f"label may not contain {ch!r}")


def _parse_header(line: str, col: int) -> tuple[DiagramKind, Direction | None]:
    words = line.split()
    if words == ["sequenceDiagram"]:
        return DiagramKind.SEQUENCE, None
    if words and words[0] == "flowchart":
        if len(words) == 2 and words[1] in ("TD", "LR"):
            return DiagramKind.FLOWCHART, Direction(words[1])
        raise _Fail(col, "flowchart header needs direction TD or LR")
    raise _Fail(col, f"unknown header {line.strip()[:40]!r}")


def parse(src: MermaidSource | str | bytes, diagram_id: str = "diagram") -> DiagramAst:
    """Parse Mermaid-subset text into a validated :class:`DiagramAst`.

    Raises :class:`MermaidParseError` (never anything else) on bad input.
    """
    hint = None
    if isinstance(src, MermaidSource):
        hint, text = src.kind_hint, src.text
    else:
        text = src
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            line = bytes(text)[:exc.start].count(b"\n") + 1
            raise MermaidParseError([ParseDiagnostic(line, 1, f"input is not valid UTF-8: {exc.reason}")]) from None
    if not isinstance(text, str):
        raise MermaidParseError([ParseDiagnostic(1, 1, f"expected text, got {type(text).__name__}")])

    lines = text.split("\n")
    builder: _FlowBuilder | _SeqBuilder | None = None
    header_line = 1
    for lineno, raw in enumerate(lines, start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        stripped = line.strip()
        if not stripped or stripped.startswith("%%"):
            continue
        col = len(line) - len(line.lstrip()) + 1
        try:
            if builder is None:
                kind, direction = _parse_header(line, col)
                if hint is not None and hint is not kind:
                    raise _Fail(col, f"expected a {hint.value} diagram, found {kind.value}")
                builder = _FlowBuilder(direction) if kind is DiagramKind.FLOWCHART else _SeqBuilder()
                header_line = lineno
            else:
                builder.statement(line, lineno)
        except _Fail as fail:
            column = min(max(fail.column, 1), max(len(line), 1))
            raise MermaidParseError([ParseDiagnostic(lineno, column, fail.message)]) from None

    if builder is None:
        raise MermaidParseError([ParseDiagnostic(1, 1, "empty input: missing diagram header")])

    ast = DiagramAst(diagram_id, builder.build())
    problems = validate(ast)
    if problems:
        diags = []
        for v in problems:
            line, col = builder.position_of(v.element) or (header_line, 1)
            diags.append(ParseDiagnostic(line, col, str(v)))
        raise MermaidParseError(diags)
    return ast


def _node_decl(n: FlowNode) -> str:
    open_, close = _SHAPE_DELIMS[n.shape]
    return f"{n.id}{open_}{n.label}{close}"


def serialize(ast: DiagramAst) -> str:
    """Canonical Mermaid text for a valid AST (LF line endings, trailing newline)."""
    require_valid(ast)
    body = ast.body
    if isinstance(body, FlowchartGraph):
        out = [f"flowchart {body.direction.value}"]
        out.extend(INDENT + _node_decl(n) for n in body.nodes)
        for e in body.edges:
            if e.label is None:
                out.append(f"{INDENT}{e.src} --> {e.dst}")
            else:
                out.append(f"{INDENT}{e.src} -->|{e.label}| {e.dst}")
    else:
        out = ["sequenceDiagram"]
        for p in body.participants:
            if p.display_name == p.id:
                out.append(f"{INDENT}participant {p.id}")
            else:
                out.append(f"{INDENT}participant {p.id} as {p.display_name}")
        for m in body.messages:
            arrow = "->>" if m.arrow is Arrow.SOLID else "-->>"
            out.append(f"{INDENT}{m.sender}{arrow}{m.receiver}: {m.label}")
    return "\n".join(out) + "\n"


def to_source(ast: DiagramAst) -> MermaidSource:
    return MermaidSource(serialize(ast), ast.kind)
