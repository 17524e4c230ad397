import dataclasses

from diagcap.captions import ICT_DEFAULT, caption, parse_caption
from diagcap.core import Arrow, DiagramKind, FlowchartGraph
from diagcap.mermaid import parse
from diagcap.synth import GenConfig

from conftest import make_diagrams
from oracles import assert_faithful, ast_edges


def test_worked_flowchart_example():
    ast = parse("flowchart TD\n  S([Start]) --> A[Check stock]\n  A --> C{In stock?}\n"
                "  C -->|Yes| B[Ship order] --> E([Done])\n  C -->|No| A\n")
    assert caption(ast).full_text == (
        "This flowchart describes the following procedure:\n"
        "Step 1: Start (Start).\n"
        "Step 2: Check stock.\n"
        "Step 3: Check In stock?. If Yes, go to Step 4; if No, go to Step 2.\n"
        "Step 4: Ship order.\n"
        "Step 5: End (Done).")


def test_jump_is_spelled_out():
    ast = parse("flowchart TD\n  S([Go]) --> C{Ok}\n  C -->|No| X[Fix] --> E([Stop])\n"
                "  C -->|Yes| Y[Log] --> E\n")
    lines = caption(ast).steps
    assert lines[3] == "Step 4: End (Stop)."
    assert lines[4] == "Step 5: Log. Then go to Step 4."


def test_worked_sequence_example():
    ast = parse("sequenceDiagram\n  participant UE\n  participant B as Base Station\n"
                "  UE->>B: Attach Request\n  B-->>UE: Attach Accept\n  B->>B: Store context\n")
    assert caption(ast).steps == (
        "Step 1: UE sends 'Attach Request' to Base Station.",
        "Step 2: Base Station sends 'Attach Accept' to UE (dashed response).",
        "Step 3: Base Station performs 'Store context' internally.",
    )


def test_faithfulness_over_generated_corpus():
    for ast in make_diagrams(300):
        assert_faithful(ast)
    for ast in make_diagrams(100, kind=DiagramKind.FLOWCHART,
                             base=GenConfig(merge_probability=0.9, decision_probability=0.6)):
        assert_faithful(ast)


def test_caption_determines_flowchart_structure():
    # Two flowcharts with the same labels get the same caption only if their
    # graphs coincide after numbering nodes by caption step.
    seen = {}
    for ast in make_diagrams(300, kind=DiagramKind.FLOWCHART):
        text = caption(ast).full_text
        key = (tuple(s.label for s in parse_caption(text).steps), frozenset(ast_edges(ast.body)))
        assert seen.setdefault(text, key) == key


def test_mutations_change_caption():
    for ast in make_diagrams(60):
        base = caption(ast).full_text
        body = ast.body
        if isinstance(body, FlowchartGraph):
            n0 = body.nodes[1]
            nodes = tuple(dataclasses.replace(n, label=n.label + " now") if n is n0 else n for n in body.nodes)
            mutated = dataclasses.replace(ast, body=dataclasses.replace(body, nodes=nodes))
        else:
            m0 = body.messages[0]
            flipped = Arrow.SOLID if m0.arrow is Arrow.DASHED else Arrow.DASHED
            msgs = (dataclasses.replace(m0, arrow=flipped),) + body.messages[1:]
            mutated = dataclasses.replace(ast, body=dataclasses.replace(body, messages=msgs))
        assert caption(mutated).full_text != base


def test_parse_caption_is_lenient():
    skel = parse_caption("Sure! Here you go.\nStep 1: Start (Boot).\nstep two: ???\nStep 2: End (Off).")
    assert skel.step_count == 2 and len(skel.unrecognized) == 2
    assert skel.references() == {1: [2], 2: []}
    assert parse_caption(None).step_count == 0
    assert parse_caption("").title is None


def test_custom_style_titles():
    style = dataclasses.replace(ICT_DEFAULT, id="terse", flowchart_title="Procedure:")
    ast = parse("flowchart TD\n  S([a]) --> E([b])\n")
    doc = caption(ast, style)
    assert doc.title_line == "Procedure:"
    assert parse_caption(doc.full_text, style).title == "Procedure:"
