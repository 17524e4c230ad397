import pytest

from diagcap.core import (
    Arrow,
    DiagramAst,
    Direction,
    FlowchartGraph,
    FlowEdge,
    FlowNode,
    InvalidDiagramError,
    Message,
    NodeShape,
    Participant,
    SequenceDiagram,
    flow_order,
    graph_oracle,
    require_valid,
    validate,
)

from conftest import make_diagrams

T, P, D = NodeShape.TERMINAL, NodeShape.PROCESS, NodeShape.DECISION


def flow(nodes, edges, direction=Direction.TOP_DOWN):
    return DiagramAst("g", FlowchartGraph(direction, tuple(FlowNode(*n) for n in nodes),
                                          tuple(FlowEdge(*e) for e in edges)))


def seq(parts, msgs):
    return DiagramAst("s", SequenceDiagram(
        tuple(Participant(*p) for p in parts),
        tuple(Message(a, b, lbl, arrow, i) for i, (a, b, lbl, arrow) in enumerate(msgs))))


LOOP = flow(
    [("S", "Start", T), ("A", "Init", P), ("C", "Ready", D), ("E", "Done", T)],
    [("S", "A"), ("A", "C"), ("C", "E", "Yes"), ("C", "A", "No")],
)


def rules(ast):
    return {v.rule for v in validate(ast)}


def test_valid_loop_has_no_violations():
    assert validate(LOOP) == []
    require_valid(LOOP)


@pytest.mark.parametrize("ast, rule", [
    (flow([("S", "Start", T), ("A", "x", P), ("E", "End", T)], [("S", "A"), ("A", "E"), ("A", "E", "Yes")]),
     "label-on-non-decision"),
    (flow([("S", "Start", T), ("A", "x", P), ("E", "End", T)], [("S", "A"), ("A", "E"), ("A", "E")]),
     "duplicate-edge"),
    (flow([("S", "Start", T), ("C", "q", D), ("E", "End", T), ("F", "End2", T)],
          [("S", "C"), ("C", "E", "Yes"), ("C", "F", "Yes")]), "decision-branch-labels"),
    (flow([("S", "Start", T), ("C", "q", D), ("E", "End", T)], [("S", "C"), ("C", "E", "Yes")]),
     "decision-branches"),
    (flow([("S", "Start", T), ("A", "x", P), ("B", "Begin", T), ("E", "End", T)],
          [("S", "A"), ("A", "E"), ("B", "A")]), "start-terminal"),
    (flow([("S", "Start", T), ("A", "x", P), ("E", "End", T)], [("S", "A"), ("A", "S")]), "no-end"),
    (flow([("S", "Start", T), ("E", "End", T)], [("S", "Q")]), "unknown-node"),
    (flow([("1S", "Start", T), ("E", "End", T)], [("1S", "E")]), "bad-id"),
    (flow([("end", "Start", T), ("E", "End", T)], [("end", "E")]), "reserved-id"),
    (flow([("S", "Start", T), ("E", "a]b", T)], [("S", "E")]), "label-chars"),
    (flow([("S", "Start", T), ("E", "a\nb", T)], [("S", "E")]), "label-newline"),
    (flow([("S", "", T), ("E", "End", T)], [("S", "E")]), "empty-label"),
    (flow([("S", "Start", T), ("S", "Again", T), ("E", "End", T)], [("S", "E")]), "duplicate-id"),
    (seq([("A", "A"), ("B", "B")], [("A", "Z", "m", Arrow.SOLID)]), "unknown-participant"),
    (seq([("A", "A"), ("B", "B"), ("C", "C")], [("A", "B", "m", Arrow.SOLID)]), "idle-participant"),
    (seq([("A", "Same"), ("B", "Same")], [("A", "B", "m", Arrow.SOLID)]), "duplicate-name"),
    (seq([("A", "A"), ("B", "B")], []), "no-messages"),
])
def test_each_rule_is_reported(ast, rule):
    assert rule in rules(ast)
    with pytest.raises(InvalidDiagramError):
        require_valid(ast)


def test_unreachable_node_named():
    ast = flow([("S", "Start", T), ("A", "x", P), ("E", "End", T), ("Z", "island", P)],
               [("S", "A"), ("A", "E"), ("Z", "E")])
    assert [v.element for v in validate(ast) if v.rule == "unreachable"] == ["Z"]


def test_seq_index_gap_reported():
    body = SequenceDiagram((Participant("A", "A"), Participant("B", "B")),
                           (Message("A", "B", "m", Arrow.SOLID, 1),))
    assert "seq-index" in rules(DiagramAst("s", body))


def test_self_message_is_valid_and_counted_once():
    ast = seq([("A", "A"), ("B", "B")], [("A", "A", "think", Arrow.SOLID), ("A", "B", "go", Arrow.DASHED)])
    assert validate(ast) == []
    facts = graph_oracle(ast)
    assert facts.involved == {"A": 2, "B": 1}
    assert facts.sent == {"A": 2, "B": 0}
    assert facts.received == {"A": 1, "B": 1}


def test_oracle_on_loop():
    facts = graph_oracle(LOOP)
    assert facts.start == "S"
    assert facts.successors["C"] == ("E", "A")
    assert facts.predecessors["A"] == ("S", "C")
    assert facts.branch_target("C", "No") == "A"


def test_flow_order_is_dfs_preorder_in_edge_order():
    ast = flow([("S", "s", T), ("C", "c", D), ("X", "x", P), ("Y", "y", P), ("E", "e", T)],
               [("S", "C"), ("C", "Y", "No"), ("C", "X", "Yes"), ("X", "E"), ("Y", "E")])
    assert flow_order(ast.body) == ["S", "C", "Y", "E", "X"]


def test_labels_multiset():
    assert sorted(LOOP.labels()) == sorted(["Start", "Init", "Ready", "Done", "Yes", "No"])


def test_generated_diagrams_are_valid():
    for ast in make_diagrams(200):
        assert validate(ast) == [], ast.diagram_id
