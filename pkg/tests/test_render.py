from collections import Counter
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from diagcap.core import Arrow, DiagramKind, Direction
from diagcap.render import RenderConfig, assign_layers, Theme, layout, polyline_midpoint, render
from diagcap.synth import GenConfig, generate

from conftest import make_diagrams

SVG = "{http://www.w3.org/2000/svg}"


def svg_texts(svg: str) -> list[str]:
    root = ET.fromstring(svg.encode("utf-8"))
    return [t.text or "" for t in root.iter(f"{SVG}text")]


def segment_hits_interior(a, b, box, eps=1e-6):
    """Axis-aligned segment a-b passes strictly through the interior of box."""
    (x1, y1), (x2, y2) = a, b
    if abs(y1 - y2) < eps:
        return box.y + eps < y1 < box.bottom - eps and min(x1, x2) < box.right - eps and max(x1, x2) > box.x + eps
    if abs(x1 - x2) < eps:
        return box.x + eps < x1 < box.right - eps and min(y1, y2) < box.bottom - eps and max(y1, y2) > box.y + eps
    raise AssertionError(f"segment {a}-{b} is not axis-aligned")


def check_flowchart_geometry(ast, lay):
    g = ast.body
    boxes = list(lay.boxes.items())
    for i, (a, ba) in enumerate(boxes):
        assert 0 <= ba.x and ba.right <= lay.width and 0 <= ba.y and ba.bottom <= lay.height
        for b, bb in boxes[i + 1:]:
            assert not ba.overlaps(bb), f"{ast.diagram_id}: boxes {a} and {b} overlap"
    assert len(lay.edges) == len(g.edges)
    for e, pts in zip(g.edges, lay.edges):
        assert len(pts) >= 2
        assert lay.boxes[e.src].on_boundary(pts[0]), f"{ast.diagram_id}: {e} leaves off-boundary"
        assert lay.boxes[e.dst].on_boundary(pts[-1]), f"{ast.diagram_id}: {e} lands off-boundary"
        for x, y in pts:
            assert 0 <= x <= lay.width and 0 <= y <= lay.height
        for p, q in zip(pts, pts[1:]):
            for nid, box in lay.boxes.items():
                if nid in (e.src, e.dst):
                    continue
                assert not segment_hits_interior(p, q, box), f"{ast.diagram_id}: {e} crosses {nid}"


@pytest.mark.parametrize("direction", list(Direction))
def test_flowchart_geometry(direction):
    for ast in make_diagrams(150, kind=DiagramKind.FLOWCHART, base=GenConfig(direction=direction)):
        check_flowchart_geometry(ast, layout(ast))


def test_flowchart_geometry_dense_merges():
    base = GenConfig(decision_probability=0.7, merge_probability=0.8, node_count_range=(10, 16))
    for ast in make_diagrams(80, kind=DiagramKind.FLOWCHART, base=base):
        check_flowchart_geometry(ast, layout(ast))


def test_layers_respect_forward_edges():
    for ast in make_diagrams(100, kind=DiagramKind.FLOWCHART, base=GenConfig(merge_probability=0.6)):
        layers, back = assign_layers(ast.body)
        assert min(layers.values()) == 0
        for i, e in enumerate(ast.body.edges):
            if i not in back:
                assert layers[e.dst] > layers[e.src]
            else:
                assert layers[e.dst] <= layers[e.src]


def test_sequence_geometry():
    for ast in make_diagrams(150, kind=DiagramKind.SEQUENCE):
        d, lay = ast.body, layout(ast)
        xs = [lay.lifelines[p.id] for p in d.participants]
        assert xs == sorted(xs) and len(set(xs)) == len(xs)
        assert lay.message_ys == sorted(lay.message_ys) and len(set(lay.message_ys)) == len(lay.message_ys)
        for m, pts, y in zip(d.messages, lay.messages, lay.message_ys):
            assert pts[0][0] == lay.lifelines[m.sender] and pts[-1][0] == lay.lifelines[m.receiver]
            assert pts[0][1] == y
            assert y < lay.lifeline_bottom <= lay.height
        boxes = list(lay.boxes.values())
        assert all(not a.overlaps(b) for i, a in enumerate(boxes) for b in boxes[i + 1:])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**64 - 1), st.sampled_from(list(DiagramKind)), st.sampled_from(list(Direction)))
def test_svg_text_multiset_equals_labels(seed, kind, direction):
    ast = generate(GenConfig(seed=seed, kind=kind, direction=direction), "p")
    assert Counter(svg_texts(render(ast))) == Counter(ast.labels())


def test_escaping_of_markup_characters():
    from diagcap.mermaid import parse
    ast = parse("flowchart TD\n  S([A & B <start>]) --> E([\"done\" 'ok'])\n")
    svg = render(ast)
    assert "&amp;" in svg and "&lt;start&gt;" in svg
    assert sorted(svg_texts(svg)) == sorted(ast.labels())


def test_dashed_messages_styled():
    ast = next(a for a in make_diagrams(40, kind=DiagramKind.SEQUENCE)
               if {m.arrow for m in a.body.messages} == {Arrow.SOLID, Arrow.DASHED})
    root = ET.fromstring(render(ast).encode())
    lines = [el for el in root.iter(f"{SVG}polyline") if el.get("class") == "message"]
    assert len(lines) == len(ast.body.messages)
    for el, m in zip(lines, ast.body.messages):
        assert ("stroke-dasharray" in el.attrib) == (m.arrow is Arrow.DASHED)
        assert el.get("marker-end") == ("url(#open-head)" if m.arrow is Arrow.DASHED else "url(#head)")


def test_shapes_emitted():
    ast = next(a for a in make_diagrams(40, kind=DiagramKind.FLOWCHART)
               if any(n.shape.name == "DECISION" for n in a.body.nodes))
    root = ET.fromstring(render(ast).encode())
    classes = Counter(el.get("class") for el in root.iter() if el.get("class"))
    shapes = Counter(n.shape.name.lower() for n in ast.body.nodes)
    for shape, n in shapes.items():
        assert classes[shape] == n
    assert classes["edge"] == len(ast.body.edges)


def test_render_is_deterministic_and_config_sensitive():
    ast = make_diagrams(1)[0]
    assert render(ast) == render(ast)
    assert render(ast, RenderConfig(theme=Theme.DARK)) != render(ast)
    assert render(ast, RenderConfig(font_size=18)) != render(ast)
    with pytest.raises(ValueError):
        RenderConfig(node_gap_x=0)


def test_polyline_midpoint():
    assert polyline_midpoint([(0, 0), (0, 10), (10, 10)]) == (0, 10)
    assert polyline_midpoint([(0, 0), (4, 0)]) == (2, 0)
