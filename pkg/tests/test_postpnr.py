"""
Tests for post-PnR register insertion, sparse FIFO splitting and memory schedules
"""
import pytest

from cgrapipe.arch import DelayLibrary
from cgrapipe.benchmarks import conv3x3, dense_stimulus, sparse_stimulus, spread_placement, unsharp, vec_add
from cgrapipe.dfg import AppGraph, Mode, Net, Node, NodeKind, Pin
from cgrapipe.errors import ScheduleError
from cgrapipe.passes import compute_pipeline
from cgrapipe.pnr import PnrParams
from cgrapipe.postpnr import (
    balance_routed,
    derive_schedules,
    insert_sparse_fifos,
    intended_arrivals,
    kernel_latency_deltas,
    midpoint_candidates,
    post_pnr_pipeline,
    split_net_with_fifo,
    update_schedule,
)
from cgrapipe.route import route
from cgrapipe.sim import Stimulus, equivalent_modulo_latency, simulate
from cgrapipe.sta import TimingGraph, balance_branches, balance_targets, critical_path, cycle_arrivals, insert_register_chain
from tests.conftest import ideal_lib, straight_route


def test_midpoint_register_halves_long_route():
    """A register at the hop nearest the middle halves a ten-hop path"""
    r = straight_route(10)
    lib = ideal_lib(r.spec, pe_core_ns=0.0)
    before = critical_path(r, lib)
    assert before.total_ns == pytest.approx(1.4)

    net_id, seg = midpoint_candidates(r, before)[0]
    assert (net_id, seg.tile) == ("p0", (0, 5))

    once = post_pnr_pipeline(r, lib, max_iters=1)
    assert once.enabled_registers() == 1
    assert critical_path(once, lib).total_ns == pytest.approx(0.7)
    # the input design is left alone
    assert r.enabled_registers() == 0


def test_pipeline_keeps_improving():
    """More iterations never end worse than one"""
    r = straight_route(10)
    lib = ideal_lib(r.spec, pe_core_ns=0.0)
    result = post_pnr_pipeline(r, lib)
    assert critical_path(result, lib).total_ns <= 0.7 + 1e-9
    assert result.enabled_registers() >= 1


def test_no_register_sites():
    """Without switch-box register sites there is nothing to insert"""
    r = straight_route(10, sb_register_sites=False)
    lib = ideal_lib(r.spec)
    assert midpoint_candidates(r, critical_path(r, lib)) == []
    assert post_pnr_pipeline(r, lib).enabled_registers() == 0


def test_post_pnr_preserves_behaviour(spec8, lib8, rg8):
    """Registers inserted after routing stay legal, balanced and equivalent"""
    g = unsharp()
    r = route(g, spread_placement(g, spec8), spec8, PnrParams(), rg8)
    before = critical_path(r, lib8)
    result = post_pnr_pipeline(r, lib8, rg=rg8)

    assert result.check_legal(rg8) == []
    assert balance_targets(result.graph, cycle_arrivals(result.graph, result)) == {}
    assert critical_path(result, lib8).total_ns <= before.total_ns + 1e-9

    stim = dense_stimulus(g, length=16, seed=3)
    same, _ = equivalent_modulo_latency(simulate(g, stim), simulate(result, stim))
    assert same


def test_split_net_with_fifo():
    """The sinks behind the cut hop move to a new net driven by the FIFO"""
    r = straight_route(10, mode=Mode.SPARSE)
    seg = r.routes["p0"][5]
    fifo = split_net_with_fifo(r, "p0", seg)
    assert fifo is not None
    assert r.graph.nodes[fifo].kind == NodeKind.FIFO
    assert r.tile_of(fifo) == (0, 5)
    assert r.graph.nets["p0"].sinks == [Pin(fifo, "in0")]
    new_net = r.graph.output_net(fifo)
    assert new_net.sinks == [Pin("p1", "in0")]
    assert all(s.tile[1] < 5 for s in r.routes["p0"])
    assert all(s.tile[1] >= 5 for s in r.routes[new_net.id])

    lib = ideal_lib(r.spec, pe_core_ns=0.0)
    assert TimingGraph(r, lib, "data").report().total_ns == pytest.approx(0.7)


def test_insert_sparse_fifos_shortens_every_signal():
    """Skid buffers cut data, valid and ready paths together"""
    r = straight_route(10, mode=Mode.SPARSE)
    lib = ideal_lib(r.spec, pe_core_ns=0.0)
    assert critical_path(r, lib).total_ns == pytest.approx(1.4)
    result = insert_sparse_fifos(r, lib)
    assert result.graph.nodes_of(NodeKind.FIFO)
    assert critical_path(result, lib).total_ns <= 0.7 + 1e-9


def test_insert_sparse_fifos_rejects_dense():
    with pytest.raises(ValueError):
        insert_sparse_fifos(straight_route(4), ideal_lib(straight_route(4).spec))


def test_sparse_fifos_keep_token_streams(spec8, rg8):
    """A routed sparse design with extra FIFOs produces the same tokens"""
    g = compute_pipeline(vec_add(), spec8)
    r = route(g, spread_placement(g, spec8), spec8, PnrParams(), rg8)
    result = insert_sparse_fifos(r, DelayLibrary.uniform(spec8))
    stim = sparse_stimulus(vec_add(), length=12, seed=4, bubble_prob=0.2)
    assert simulate(result, stim).outputs == simulate(vec_add(), stim).outputs


def test_derive_schedules():
    """Line buffers read where their data first arrives"""
    g = conv3x3()
    assert intended_arrivals(g) == {"lb0": 0, "lb1": 8}
    scheduled = derive_schedules(g, 4)
    assert scheduled.schedules["lb0"] == [0, 1, 2, 3]
    assert scheduled.schedules["lb1"] == [8, 9, 10, 11]
    assert g.schedules == {}


def test_schedule_follows_added_latency():
    """Two registers in front of a MEM push its schedule by two cycles"""
    before = derive_schedules(conv3x3(), 4)
    after = before.copy()
    insert_register_chain(after, Pin("lb1", "in0"), 2)
    deltas = kernel_latency_deltas(before, after)
    assert deltas == {"lb0": 0, "lb1": 2}
    updated = update_schedule(after, deltas)
    assert updated.schedules["lb0"] == [0, 1, 2, 3]
    assert updated.schedules["lb1"] == [10, 11, 12, 13]


def test_schedule_underflow():
    """Shifting an offset below zero is a schedule error"""
    g = conv3x3()
    g.schedules["lb0"] = [0, 1]
    with pytest.raises(ScheduleError):
        update_schedule(g, {"lb0": -1})


def _skewed_app() -> AppGraph:
    """`x` sees `a` directly on in0 and one register late on in1"""
    g = AppGraph()
    g.add_node(Node(id="a", kind=NodeKind.IO_IN))
    g.add_node(Node(id="r", kind=NodeKind.REG))
    g.add_node(Node(id="x", kind=NodeKind.PE, op="add", input_regs=[False, False]))
    g.add_node(Node(id="out", kind=NodeKind.IO_OUT))
    g.add_net(Net(id="a", driver=Pin("a", "out"), sinks=[Pin("x", "in0"), Pin("r", "in0")]))
    g.add_net(Net(id="r", driver=Pin("r", "out"), sinks=[Pin("x", "in1")]))
    g.add_net(Net(id="x", driver=Pin("x", "out"), sinks=[Pin("out", "in0")]))
    return g


def test_balance_routed(spec8, rg8):
    """A routed design with a skewed input is delay matched after routing"""
    g = _skewed_app()
    r = route(g, spread_placement(g, spec8), spec8, PnrParams(), rg8)
    assert balance_targets(r.graph, cycle_arrivals(r.graph, r)) == {Pin("x", "in0"): 1}

    result, ok = balance_routed(r.copy(), rg=rg8)
    assert ok
    assert balance_targets(result.graph, cycle_arrivals(result.graph, result)) == {}
    assert result.check_legal(rg8) == []

    reference, _ = balance_branches(g)
    stim = Stimulus({"a": [1, 2, 3, 4, 5]})
    assert equivalent_modulo_latency(simulate(reference, stim), simulate(result, stim)) == (True, 0)


def test_unbalanceable_input_is_left_unchanged(spec8, lib8, rg8, monkeypatch):
    """A failed balance returns the input design, not a half-registered one"""
    g = _skewed_app()
    r = route(g, spread_placement(g, spec8), spec8, PnrParams(), rg8)

    def partial_balance(routed, params=None, rg=None):
        insert_register_chain(routed.graph, Pin("x", "in0"), 1)
        return routed, False

    monkeypatch.setattr("cgrapipe.postpnr.balance_routed", partial_balance)
    result = post_pnr_pipeline(r, lib8, rg=rg8)
    assert result is not r
    assert set(result.graph.nodes) == set(r.graph.nodes)
    assert result.routes == r.routes
    assert balance_targets(result.graph, cycle_arrivals(result.graph, result)) == {Pin("x", "in0"): 1}
