"""Deterministic layout and SVG 1.1 emission.

Flowcharts use longest-path layering over the graph with DFS back-edges
removed.  Edges are orthogonal polylines that only run through the free
gaps between layers, inside the column of their own end nodes, or along a
routing corridor to the right of (TD) / below (LR) every node box, so they
never cross a node box.  Sequence diagrams place participants on equally
spaced lifelines with messages stacked top to bottom.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from xml.sax.saxutils import escape

from .core import (
    Arrow,
    DiagramAst,
    Direction,
    FlowchartGraph,
    NodeShape,
    SequenceDiagram,
    require_valid,
)

CHAR_WIDTH_FACTOR = 0.6
BOX_PADDING = 1.2


class Theme(Enum):
    LIGHT = "light"
    DARK = "dark"


_PALETTE = {
    Theme.LIGHT: {"bg": "#ffffff", "fill": "#eef3fb", "stroke": "#1f3b63", "text": "#111111", "line": "#444444"},
    Theme.DARK: {"bg": "#1e1e1e", "fill": "#2b3a4f", "stroke": "#9fc3ff", "text": "#f0f0f0", "line": "#c8c8c8"},
}


@dataclass(frozen=True)
class RenderConfig:
    canvas_padding: float = 24.0
    node_gap_x: float = 40.0
    node_gap_y: float = 56.0
    font_size: float = 14.0
    theme: Theme = Theme.LIGHT

    def __post_init__(self):
        for name in ("canvas_padding", "node_gap_x", "node_gap_y", "font_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    def overlaps(self, other: "Box") -> bool:
        return (self.x < other.right and other.x < self.right
                and self.y < other.bottom and other.y < self.bottom)

    def on_boundary(self, pt: tuple[float, float], tol: float = 1e-6) -> bool:
        px, py = pt
        inside_x = self.x - tol <= px <= self.right + tol
        inside_y = self.y - tol <= py <= self.bottom + tol
        on_vertical = min(abs(px - self.x), abs(px - self.right)) <= tol and inside_y
        on_horizontal = min(abs(py - self.y), abs(py - self.bottom)) <= tol and inside_x
        return on_vertical or on_horizontal


Point = tuple[float, float]


@dataclass
class Layout:
    width: float
    height: float
    boxes: dict[str, Box] = field(default_factory=dict)
    edges: list[list[Point]] = field(default_factory=list)
    layers: dict[str, int] = field(default_factory=dict)
    lifelines: dict[str, float] = field(default_factory=dict)
    message_ys: list[float] = field(default_factory=list)
    messages: list[list[Point]] = field(default_factory=list)
    lifeline_bottom: float = 0.0


def text_width(text: str, font_size: float) -> float:
    return len(text) * CHAR_WIDTH_FACTOR * font_size


def _node_size(label: str, shape: NodeShape, font: float) -> tuple[float, float]:
    tw = text_width(label, font) * BOX_PADDING
    if shape is NodeShape.DECISION:
        return tw * 1.6 + 2 * font, 4.0 * font
    return tw + 2 * font, 2.6 * font


def _back_edges(graph: FlowchartGraph, start: str) -> set[int]:
    """Indices of edges that close a cycle in a DFS from ``start``."""
    out_edges: dict[str, list[int]] = defaultdict(list)
    for i, e in enumerate(graph.edges):
        out_edges[e.src].append(i)
    back: set[int] = set()
    state: dict[str, int] = {}
    # iterative DFS with explicit edge cursors: 1 = on stack, 2 = finished
    stack = [(start, iter(out_edges[start]))]
    state[start] = 1
    while stack:
        node, it = stack[-1]
        idx = next(it, None)
        if idx is None:
            state[node] = 2
            stack.pop()
            continue
        dst = graph.edges[idx].dst
        st = state.get(dst)
        if st == 1:
            back.add(idx)
        elif st is None:
            state[dst] = 1
            stack.append((dst, iter(out_edges[dst])))
    return back


def assign_layers(graph: FlowchartGraph) -> tuple[dict[str, int], set[int]]:
    """Longest-path layering; returns (layer per node, indices of back-edges)."""
    indeg = defaultdict(int)
    for e in graph.edges:
        indeg[e.dst] += 1
    start = next(n.id for n in graph.nodes if n.shape is NodeShape.TERMINAL and indeg[n.id] == 0)
    back = _back_edges(graph, start)
    forward = [e for i, e in enumerate(graph.edges) if i not in back]
    preds: dict[str, list[str]] = defaultdict(list)
    fwd_indeg = {n.id: 0 for n in graph.nodes}
    succ: dict[str, list[str]] = defaultdict(list)
    for e in forward:
        preds[e.dst].append(e.src)
        succ[e.src].append(e.dst)
        fwd_indeg[e.dst] += 1
    order = []
    ready = [n.id for n in graph.nodes if fwd_indeg[n.id] == 0]
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        for nxt in succ[cur]:
            fwd_indeg[nxt] -= 1
            if fwd_indeg[nxt] == 0:
                ready.append(nxt)
    layer: dict[str, int] = {}
    for nid in order:
        layer[nid] = 1 + max((layer[p] for p in preds[nid]), default=-1)
    return layer, back


class _Frame:
    """Maps (along-layer, across-layer) coordinates onto (x, y)."""

    def __init__(self, direction: Direction):
        self.td = direction is Direction.TOP_DOWN

    def pt(self, cross: float, depth: float) -> Point:
        return (cross, depth) if self.td else (depth, cross)

    def box(self, cross: float, depth: float, cross_size: float, depth_size: float) -> Box:
        if self.td:
            return Box(cross, depth, cross_size, depth_size)
        return Box(depth, cross, depth_size, cross_size)

    def sizes(self, w: float, h: float) -> tuple[float, float]:
        return (w, h) if self.td else (h, w)


def _layout_flowchart(graph: FlowchartGraph, cfg: RenderConfig) -> Layout:
    font = cfg.font_size
    frame = _Frame(graph.direction)
    layer, back = assign_layers(graph)
    n_layers = max(layer.values()) + 1
    members: list[list[str]] = [[] for _ in range(n_layers)]
    for n in graph.nodes:
        members[layer[n.id]].append(n.id)

    size = {n.id: frame.sizes(*_node_size(n.label, n.shape, font)) for n in graph.nodes}
    row_cross = [sum(size[m][0] for m in row) + cfg.node_gap_x * (len(row) - 1) for row in members]
    row_depth = [max(size[m][1] for m in row) for row in members]
    max_cross = max(row_cross)

    gap = cfg.node_gap_y if frame.td else cfg.node_gap_x * 1.5
    # one gap before the first layer is reserved for back-edge routes into layer 0
    depth_top = []
    d = cfg.canvas_padding + gap
    for k in range(n_layers):
        depth_top.append(d)
        d += row_depth[k] + gap
    depth_extent = d

    # half a gap of slack on both cross sides keeps side-exit strips on the canvas
    left = cfg.canvas_padding + cfg.node_gap_x / 2
    boxes: dict[str, Box] = {}
    for k, row in enumerate(members):
        c = left + (max_cross - row_cross[k]) / 2
        for nid in row:
            cs, ds = size[nid]
            boxes[nid] = frame.box(c, depth_top[k] + (row_depth[k] - ds) / 2, cs, ds)
            c += cs + cfg.node_gap_x

    def cross_lo(b: Box) -> float:
        return b.x if frame.td else b.y

    def cross_hi(b: Box) -> float:
        return b.right if frame.td else b.bottom

    def depth_lo(b: Box) -> float:
        return b.y if frame.td else b.x

    def depth_hi(b: Box) -> float:
        return b.bottom if frame.td else b.right

    def cross_mid(b: Box) -> float:
        return b.cx if frame.td else b.cy

    def depth_mid(b: Box) -> float:
        return b.cy if frame.td else b.cx

    # routing lanes inside each inter-layer gap: gap k lies just above layer k
    gap_users: dict[int, int] = defaultdict(int)
    planned = []
    corridor_count = 0
    for i, e in enumerate(graph.edges):
        ls, ld = layer[e.src], layer[e.dst]
        long_route = i in back or ld != ls + 1
        planned.append((i, ls, ld, long_route))
        gap_users[ls + 1] += 1
        if long_route:
            gap_users[ld] += 1
            corridor_count += 1

    def gap_bounds(k: int) -> tuple[float, float]:
        hi = depth_top[k] if k < n_layers else depth_extent
        return hi - gap, hi

    gap_slot: dict[int, int] = defaultdict(int)

    def lane(k: int) -> float:
        lo, hi = gap_bounds(k)
        gap_slot[k] += 1
        return lo + (hi - lo) * gap_slot[k] / (gap_users[k] + 1)

    corridor_base = left + max_cross + cfg.node_gap_x / 2
    corridor_step = max(cfg.node_gap_x / 2, 8.0)
    # branch index per decision, for side exits
    branch_rank: dict[int, int] = {}
    seen_src: dict[str, int] = defaultdict(int)
    for i, e in enumerate(graph.edges):
        branch_rank[i] = seen_src[e.src]
        seen_src[e.src] += 1

    edges: list[list[Point]] = []
    corridor_used = 0
    row_index = {nid: row.index(nid) for row in members for nid in row}
    for i, ls, ld, long_route in planned:
        e = graph.edges[i]
        sb, db = boxes[e.src], boxes[e.dst]
        pts: list[tuple[float, float]] = []
        rank = branch_rank[i]
        src_row = members[ls]
        pos = row_index[e.src]
        if rank == 1 or rank == 2:
            # side exit from the diamond's right (rank 1) / left (rank 2) vertex into the free
            # strip next to it, then down to the gap below the source layer
            if rank == 1:
                edge_x = cross_hi(sb)
                nb = boxes[src_row[pos + 1]] if pos + 1 < len(src_row) else None
                strip = (edge_x + cross_lo(nb)) / 2 if nb else edge_x + cfg.node_gap_x / 2
            else:
                edge_x = cross_lo(sb)
                nb = boxes[src_row[pos - 1]] if pos > 0 else None
                strip = (edge_x + cross_hi(nb)) / 2 if nb else edge_x - cfg.node_gap_x / 2
            pts.append((edge_x, depth_mid(sb)))
            pts.append((strip, depth_mid(sb)))
            y_exit = lane(ls + 1)
            pts.append((strip, y_exit))
        else:
            pts.append((cross_mid(sb), depth_hi(sb)))
            y_exit = lane(ls + 1)
            pts.append((cross_mid(sb), y_exit))
        if long_route:
            xc = corridor_base + corridor_used * corridor_step
            corridor_used += 1
            y_entry = lane(ld)
            pts.append((xc, y_exit))
            pts.append((xc, y_entry))
            pts.append((cross_mid(db), y_entry))
        else:
            pts.append((cross_mid(db), y_exit))
        pts.append((cross_mid(db), depth_lo(db)))
        edges.append([frame.pt(c, dd) for c, dd in _dedupe(pts)])

    cross_extent = corridor_base + corridor_count * corridor_step + cfg.canvas_padding
    depth_total = depth_extent + cfg.canvas_padding
    width, height = frame.pt(cross_extent, depth_total)
    return Layout(width=width, height=height, boxes=boxes, edges=edges, layers=layer)


def _dedupe(pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for p in pts:
        if out and abs(out[-1][0] - p[0]) < 1e-9 and abs(out[-1][1] - p[1]) < 1e-9:
            continue
        out.append(p)
    # drop collinear middle points
    i = 1
    while i < len(out) - 1:
        (x0, y0), (x1, y1), (x2, y2) = out[i - 1], out[i], out[i + 1]
        if (abs(x0 - x1) < 1e-9 and abs(x1 - x2) < 1e-9) or (abs(y0 - y1) < 1e-9 and abs(y1 - y2) < 1e-9):
            del out[i]
        else:
            i += 1
    return out


def _layout_sequence(d: SequenceDiagram, cfg: RenderConfig) -> Layout:
    font = cfg.font_size
    head_w = [text_width(p.display_name, font) * BOX_PADDING + 2 * font for p in d.participants]
    msg_w = max(text_width(m.label, font) * BOX_PADDING for m in d.messages)
    spacing = max(max(head_w) + cfg.node_gap_x, msg_w + 2 * font)
    head_h = 2.6 * font
    boxes = {}
    lifelines = {}
    for i, p in enumerate(d.participants):
        cx = cfg.canvas_padding + spacing / 2 + i * spacing
        boxes[p.id] = Box(cx - head_w[i] / 2, cfg.canvas_padding, head_w[i], head_h)
        lifelines[p.id] = cx
    top = cfg.canvas_padding + head_h
    loop_w = 2.0 * font
    ys = []
    polylines = []
    for k, m in enumerate(d.messages):
        y = top + cfg.node_gap_y * (k + 1)
        ys.append(y)
        x0, x1 = lifelines[m.sender], lifelines[m.receiver]
        if m.is_self:
            drop = cfg.node_gap_y * 0.4
            polylines.append([(x0, y), (x0 + loop_w, y), (x0 + loop_w, y + drop), (x0, y + drop)])
        else:
            polylines.append([(x0, y), (x1, y)])
    bottom = top + cfg.node_gap_y * (len(d.messages) + 1)
    width = 2 * cfg.canvas_padding + spacing * len(d.participants)
    return Layout(width=width, height=bottom + cfg.canvas_padding, boxes=boxes, lifelines=lifelines,
                  message_ys=ys, messages=polylines, lifeline_bottom=bottom)


def layout(ast: DiagramAst, cfg: RenderConfig | None = None) -> Layout:
    require_valid(ast)
    cfg = cfg or RenderConfig()
    if isinstance(ast.body, FlowchartGraph):
        return _layout_flowchart(ast.body, cfg)
    return _layout_sequence(ast.body, cfg)


def _f(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _points(pts) -> str:
    return " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)


def polyline_midpoint(pts: list[Point]) -> Point:
    lengths = [math.dist(a, b) for a, b in zip(pts, pts[1:])]
    half = sum(lengths) / 2
    for (a, b), seg in zip(zip(pts, pts[1:]), lengths):
        if half <= seg and seg > 0:
            t = half / seg
            return a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t
        half -= seg
    return pts[-1]


def _text(x: float, y: float, content: str, font: float, color: str, anchor: str = "middle") -> str:
    return (f'<text x="{_f(x)}" y="{_f(y)}" font-size="{_f(font)}" fill="{color}" '
            f'text-anchor="{anchor}" dominant-baseline="central">{escape(content)}</text>')


def render(ast: DiagramAst, cfg: RenderConfig | None = None) -> str:
    """Render ``ast`` to a standalone SVG 1.1 document (byte-deterministic)."""
    cfg = cfg or RenderConfig()
    lay = layout(ast, cfg)
    pal = _PALETTE[cfg.theme]
    font = cfg.font_size
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(lay.width)}" '
        f'height="{_f(lay.height)}" viewBox="0 0 {_f(lay.width)} {_f(lay.height)}" '
        f'font-family="monospace">',
        "<defs>",
        f'<marker id="head" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="8" markerHeight="8" '
        f'orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{pal["line"]}"/></marker>',
        f'<marker id="open-head" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="8" markerHeight="8" '
        f'orient="auto"><path d="M0,0 L10,5 L0,10" fill="none" stroke="{pal["line"]}"/></marker>',
        "</defs>",
        f'<rect x="0" y="0" width="{_f(lay.width)}" height="{_f(lay.height)}" fill="{pal["bg"]}"/>',
    ]
    body = ast.body
    if isinstance(body, FlowchartGraph):
        for i, e in enumerate(body.edges):
            out.append(f'<polyline class="edge" points="{_points(lay.edges[i])}" fill="none" '
                       f'stroke="{pal["line"]}" stroke-width="1.5" marker-end="url(#head)"/>')
        for n in body.nodes:
            b = lay.boxes[n.id]
            style = f'fill="{pal["fill"]}" stroke="{pal["stroke"]}" stroke-width="1.5"'
            if n.shape is NodeShape.TERMINAL:
                out.append(f'<rect class="terminal" x="{_f(b.x)}" y="{_f(b.y)}" width="{_f(b.w)}" '
                           f'height="{_f(b.h)}" rx="{_f(min(b.w, b.h) / 2)}" {style}/>')
            elif n.shape is NodeShape.PROCESS:
                out.append(f'<rect class="process" x="{_f(b.x)}" y="{_f(b.y)}" width="{_f(b.w)}" '
                           f'height="{_f(b.h)}" {style}/>')
            else:
                diamond = [(b.cx, b.y), (b.right, b.cy), (b.cx, b.bottom), (b.x, b.cy)]
                out.append(f'<polygon class="decision" points="{_points(diamond)}" {style}/>')
            out.append(_text(b.cx, b.cy, n.label, font, pal["text"]))
        for i, e in enumerate(body.edges):
            if e.label is not None:
                mx, my = polyline_midpoint(lay.edges[i])
                out.append(_text(mx + 4, my - font * 0.6, e.label, font * 0.85, pal["text"], anchor="start"))
    else:
        for p in body.participants:
            b = lay.boxes[p.id]
            x = lay.lifelines[p.id]
            out.append(f'<line class="lifeline" x1="{_f(x)}" y1="{_f(b.bottom)}" x2="{_f(x)}" '
                       f'y2="{_f(lay.lifeline_bottom)}" stroke="{pal["line"]}" stroke-dasharray="4 4"/>')
            out.append(f'<rect class="participant" x="{_f(b.x)}" y="{_f(b.y)}" width="{_f(b.w)}" '
                       f'height="{_f(b.h)}" fill="{pal["fill"]}" stroke="{pal["stroke"]}" stroke-width="1.5"/>')
            out.append(_text(b.cx, b.cy, p.display_name, font, pal["text"]))
        for k, m in enumerate(body.messages):
            pts = lay.messages[k]
            if m.arrow is Arrow.SOLID:
                stroke = f'stroke="{pal["line"]}" stroke-width="1.5" marker-end="url(#head)"'
            else:
                stroke = (f'stroke="{pal["line"]}" stroke-width="1.5" stroke-dasharray="6 4" '
                          f'marker-end="url(#open-head)"')
            out.append(f'<polyline class="message" points="{_points(pts)}" fill="none" {stroke}/>')
            y = lay.message_ys[k]
            if m.is_self:
                out.append(_text(pts[1][0] + 6, y + font * 0.2, m.label, font * 0.9, pal["text"], anchor="start"))
            else:
                out.append(_text((pts[0][0] + pts[1][0]) / 2, y - font * 0.8, m.label, font * 0.9, pal["text"]))
    out.append("</svg>")
    return "\n".join(out) + "\n"
