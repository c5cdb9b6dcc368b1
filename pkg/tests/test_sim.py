"""
Tests for the dense and ready-valid simulators
"""
import pytest

from cgrapipe.arch import ArchSpec, build_routing_graph
from cgrapipe.benchmarks import relu, spread_placement, ttv, vec_add
from cgrapipe.dfg import AppGraph, Mode, Net, Node, NodeKind, Pin
from cgrapipe.errors import SimulationError
from cgrapipe.pnr import PnrParams, place
from cgrapipe.route import route
from cgrapipe.sim import EOS, Stimulus, TraceResult, equivalent_modulo_latency, simulate, simulate_dense
from tests.conftest import pipe_app


def test_relu_values():
    """Signed max against zero on 16-bit words"""
    result = simulate(relu(), Stimulus({"in": [5, 0xFFFF, 3]}))
    assert result.defined("out") == [5, 0, 3]
    assert result.warnings == []


def test_input_register_adds_one_cycle():
    g = relu()
    registered = relu()
    registered.nodes["relu"].input_regs = [True]
    stim = Stimulus({"in": [5, 0xFFFF, 3]})
    assert equivalent_modulo_latency(simulate(g, stim), simulate(registered, stim)) == (True, 1)


def test_mem_schedule_gates_capture():
    """A MEM only captures at its schedule offsets and answers after its latency"""
    g = AppGraph()
    g.add_node(Node(id="in", kind=NodeKind.IO_IN))
    g.add_node(Node(id="m", kind=NodeKind.MEM, mem_latency=2))
    g.add_node(Node(id="out", kind=NodeKind.IO_OUT))
    g.add_net(Net(id="in", driver=Pin("in", "out"), sinks=[Pin("m", "in0")]))
    g.add_net(Net(id="m", driver=Pin("m", "out"), sinks=[Pin("out", "in0")]))
    g.schedules["m"] = [1]
    result = simulate(g, Stimulus({"in": [7, 8, 9]}))
    assert result.defined("out") == [8]
    assert result.outputs["out"].index(8) == 3


def test_unbalanced_graph_warns():
    """Arrival mismatches are reported, not hidden"""
    g = AppGraph()
    g.add_node(Node(id="a", kind=NodeKind.IO_IN))
    g.add_node(Node(id="r", kind=NodeKind.REG))
    g.add_node(Node(id="x", kind=NodeKind.PE, op="add", input_regs=[False, False]))
    g.add_node(Node(id="out", kind=NodeKind.IO_OUT))
    g.add_net(Net(id="a", driver=Pin("a", "out"), sinks=[Pin("x", "in0"), Pin("r", "in0")]))
    g.add_net(Net(id="r", driver=Pin("r", "out"), sinks=[Pin("x", "in1")]))
    g.add_net(Net(id="x", driver=Pin("x", "out"), sinks=[Pin("out", "in0")]))
    result = simulate(g, Stimulus({"a": [1, 2, 3]}))
    assert result.defined("out") == [3, 5]
    assert any("x.in0" in w for w in result.warnings)


def test_switch_box_register_delays_routed_design():
    """An enabled routing register shifts the output by one cycle"""
    spec = ArchSpec.standard(5, 5)
    g = pipe_app(2)
    r = route(g, place(g, spec, PnrParams(seed=1)), spec, PnrParams(seed=1), build_routing_graph(spec))
    net_id, segments = next((n, s) for n, s in sorted(r.routes.items()) if s)
    r.set_register(net_id, segments[0].resource)
    stim = Stimulus({"in": [1, 2, 3, 4]})
    assert equivalent_modulo_latency(simulate(g, stim), simulate(r, stim)) == (True, 1)


def test_dense_simulator_rejects_sparse_graph():
    with pytest.raises(SimulationError):
        simulate_dense(vec_add(), Stimulus({"a": [1], "b": [2]}))


def test_stimulus_from_dict():
    stim = Stimulus.from_dict({"streams": {"a": [1, "EOS"]}})
    assert stim.streams["a"] == [1, EOS]
    assert stim.length() == 2


def test_sparse_vec_add():
    stim = Stimulus({"a": [1, 2, 3, EOS], "b": [10, 20, 30, EOS]})
    result = simulate(vec_add(), stim)
    assert result.outputs == {"out": [11, 22, 33]}
    assert not result.deadlock


def test_sparse_bubbles_do_not_change_tokens():
    """Cycles without a token delay the stream but never alter it"""
    stim = Stimulus({"a": [1, None, 2, 3, EOS], "b": [10, 20, None, None, 30, EOS]})
    result = simulate(vec_add(), stim)
    assert result.outputs == {"out": [11, 22, 33]}


def test_sparse_accumulator_reduces_fibers():
    stim = Stimulus({"t": [1, 2, 3, 4, EOS], "v": [1, 1, 1, 1, EOS]})
    assert simulate(ttv(k=2), stim).outputs == {"out": [3, 7]}


def test_sparse_accumulator_flushes_partial_fiber():
    """End-of-stream emits what the accumulator still holds"""
    stim = Stimulus({"t": [1, 2, 3, EOS], "v": [1, 1, 1, EOS]})
    assert simulate(ttv(k=2), stim).outputs == {"out": [3, 3]}


def test_sparse_deadlock_is_detected():
    """A loop through an empty FIFO never fires"""
    g = AppGraph(mode=Mode.SPARSE)
    g.add_node(Node(id="a", kind=NodeKind.IO_IN))
    g.add_node(Node(id="p", kind=NodeKind.PE, op="add"))
    g.add_node(Node(id="f", kind=NodeKind.FIFO, depth=2))
    g.add_node(Node(id="out", kind=NodeKind.IO_OUT))
    g.add_net(Net(id="a", driver=Pin("a", "out"), sinks=[Pin("p", "in0")]))
    g.add_net(Net(id="p", driver=Pin("p", "out"), sinks=[Pin("f", "in0"), Pin("out", "in0")]))
    g.add_net(Net(id="f", driver=Pin("f", "out"), sinks=[Pin("p", "in1")]))
    result = simulate(g, Stimulus({"a": [1, 2, EOS]}))
    assert result.deadlock
    assert result.outputs == {"out": []}


def test_equivalence_needs_every_output():
    """A delayed trace that loses its last values is not equivalent"""
    full = TraceResult(outputs={"out": [1, 2, 3]})
    assert equivalent_modulo_latency(full, TraceResult(outputs={"out": [None, 1, 2, 3]})) == (True, 1)
    assert equivalent_modulo_latency(full, TraceResult(outputs={"out": [None, 1, 2]})) == (False, None)
    assert equivalent_modulo_latency(full, TraceResult(outputs={"out": [None, 1, 2, 3, 4]})) == (False, None)


def test_equivalence_rejects_deadlock():
    """A stalled run never matches, even on the tokens it did produce"""
    done = TraceResult(outputs={"out": [5, 6, 7, 8]})
    stalled = TraceResult(outputs={"out": [5]}, deadlock=True)
    assert equivalent_modulo_latency(done, stalled) == (False, None)
    assert equivalent_modulo_latency(stalled, stalled) == (False, None)


def test_registered_sparse_route_breaks_handshake(spec8, rg8):
    """A routing register on data and valid, with ready left unregistered, corrupts the stream"""
    g = vec_add()
    r = route(g, spread_placement(g, spec8), spec8, PnrParams(), rg8)
    r.set_register("a", r.routes["a"][0].resource)
    stim = Stimulus({"a": [1, 2, 3, EOS], "b": [10, 20, 30, EOS]})
    reference = simulate(g, stim)
    result = simulate(r, stim)
    assert result.deadlock or result.outputs != reference.outputs
    assert equivalent_modulo_latency(reference, result) == (False, None)
