"""
Tests for application parsing and the dataflow IR
"""
import json

import pytest

from cgrapipe.arch import ArchSpec
from cgrapipe.dfg import (
    AppGraph,
    Mode,
    Node,
    NodeKind,
    Pin,
    dump_app,
    evaluate_op,
    parse_app,
    topo_order,
    validate_semantics,
)
from cgrapipe.errors import AppParseError, GraphCycleError
from tests.conftest import DATA, pipe_app


def _app(nodes: dict, nets: list, mode: str = "dense") -> str:
    return json.dumps({"mode": mode, "nodes": nodes, "nets": nets}, indent=2)


LOOP_NODES = {
    "a": {"kind": "IO_IN"},
    "p": {"kind": "PE", "op": "add"},
    "out": {"kind": "IO_OUT"},
}
LOOP_NETS = [
    {"id": "a", "driver": ["a", "out"], "sinks": [["p", "in0"]]},
    {"id": "p", "driver": ["p", "out"], "sinks": [["p", "in1"], ["out", "in0"]]},
]


def test_parse_shipped_app():
    """The example application parses into nodes and nets"""
    g = parse_app((DATA / "apps" / "add_relu.json").read_text())
    assert g.mode == Mode.DENSE
    assert len(g.nodes) == 5
    assert len(g.nets) == 4
    relu = g.nodes["relu"]
    assert relu.n_inputs == 1
    assert relu.input_regs == [False]
    assert topo_order(g)[0] == "a"


def test_dense_cycle_is_rejected():
    """A loop without a register is a cycle in dense mode"""
    with pytest.raises(GraphCycleError) as excinfo:
        parse_app(_app(LOOP_NODES, LOOP_NETS))
    assert "p" in excinfo.value.cycle


def test_sparse_cycle_is_accepted():
    """Ready-valid graphs may contain loops"""
    g = parse_app(_app(LOOP_NODES, LOOP_NETS, mode="sparse"))
    assert g.mode == Mode.SPARSE


def test_multi_driver_is_rejected():
    """Two nets may not drive the same input"""
    nodes = {"a": {"kind": "IO_IN"}, "b": {"kind": "IO_IN"}, "out": {"kind": "IO_OUT"}}
    nets = [
        {"id": "a", "driver": ["a", "out"], "sinks": [["out", "in0"]]},
        {"id": "b", "driver": ["b", "out"], "sinks": [["out", "in0"]]},
    ]
    with pytest.raises(AppParseError, match="multi-driver"):
        parse_app(_app(nodes, nets))


def test_unconnected_input_is_rejected():
    """Every data input needs a driver"""
    nodes = {"a": {"kind": "IO_IN"}, "p": {"kind": "PE", "op": "add"}, "out": {"kind": "IO_OUT"}}
    nets = [
        {"id": "a", "driver": ["a", "out"], "sinks": [["p", "in0"]]},
        {"id": "p", "driver": ["p", "out"], "sinks": [["out", "in0"]]},
    ]
    with pytest.raises(AppParseError, match="unconnected"):
        parse_app(_app(nodes, nets))


def test_unknown_opcode_reports_line():
    """Errors point at the offending line"""
    nodes = {"a": {"kind": "IO_IN"}, "p": {"kind": "PE", "op": "frobnicate"}}
    with pytest.raises(AppParseError) as excinfo:
        parse_app(_app(nodes, []))
    assert excinfo.value.line is not None
    assert "frobnicate" in str(excinfo.value)


def test_width_mismatch():
    """A 1-bit net cannot feed a MEM data input"""
    nodes = {"a": {"kind": "IO_IN"}, "m": {"kind": "MEM"}, "out": {"kind": "IO_OUT"}}
    nets = [
        {"id": "a", "driver": ["a", "out"], "sinks": [["m", "in0"]], "width": 1},
        {"id": "m", "driver": ["m", "out"], "sinks": [["out", "in0"]]},
    ]
    with pytest.raises(AppParseError, match="width mismatch"):
        parse_app(_app(nodes, nets))


def test_validate_semantics():
    """Mode-specific node kinds and undeclared hardened nets are flagged"""
    spec = ArchSpec.standard(4, 4)
    g = pipe_app(1)
    g.nodes["p0"].op = "acc"
    g.add_node(Node(id="f", kind=NodeKind.FIFO))
    g.nets["in"].width = 1
    g.nets["in"].hardened = True
    violations = validate_semantics(g, spec)
    assert any("sparse-only" in v for v in violations)
    assert any("FIFO is only legal in sparse mode" in v for v in violations)
    assert any("not declared" in v for v in violations)

    sparse = pipe_app(1, mode=Mode.SPARSE)
    sparse.add_node(Node(id="r", kind=NodeKind.REG))
    assert any("REG breaks" in v for v in validate_semantics(sparse, spec))


def test_schedule_checks():
    """Schedules belong to MEMs and must increase"""
    spec = ArchSpec.standard(4, 4)
    g = pipe_app(1)
    g.schedules["p0"] = [0, 1]
    assert any("only apply to MEM" in v for v in validate_semantics(g, spec))


def test_dump_is_canonical():
    """Serialization is stable under a parse round"""
    g = pipe_app(3)
    text = dump_app(g)
    assert dump_app(parse_app(text)) == text


def test_evaluate_op():
    """16-bit wrap-around and signed comparisons"""
    assert evaluate_op("add", [0xFFFF, 1]) == 0
    assert evaluate_op("shr", [0xFFF0, 2]) == 0xFFFC
    assert evaluate_op("max", [0xFFFF, 0]) == 0
    assert evaluate_op("lt", [0xFFFF, 0]) == 1
    assert evaluate_op("mux", [3, 9, 1]) == 9
    assert evaluate_op("add", [2, 1], width=1) == 1


def test_splice_inserts_node():
    """Splicing moves the chosen sinks behind the new node"""
    g = pipe_app(1)
    net = g.splice("in", [Pin("p0", "in0")], Node(id="r", kind=NodeKind.REG))
    assert g.nets["in"].sinks == [Pin("r", "in0")]
    assert net.driver == Pin("r", "out")
    assert net.sinks == [Pin("p0", "in0")]
    assert isinstance(g.copy(), AppGraph)
