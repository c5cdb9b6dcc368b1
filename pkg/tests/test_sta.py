"""
Tests for static timing analysis and cycle-level arrivals
"""
import networkx as nx
import pytest

from cgrapipe.arch import ArchSpec, DelayLibrary, build_routing_graph
from cgrapipe.benchmarks import conv3x3, random_dense_dag, spread_placement, vec_add
from cgrapipe.dfg import AppGraph, Net, Node, NodeKind, Pin
from cgrapipe.passes import compute_pipeline
from cgrapipe.pnr import PnrParams, place
from cgrapipe.route import route
from cgrapipe.sta import (
    SIGNALS,
    TimingGraph,
    balance_branches,
    balance_targets,
    critical_path,
    cycle_arrivals,
    fmax_mhz,
)
from tests.conftest import ideal_lib, pipe_app, seed_sweep, straight_route


def test_five_hop_route():
    """PE core plus five 0.14 ns hops into a registered input"""
    r = straight_route(5)
    report = critical_path(r, ideal_lib(r.spec))
    assert report.total_ns == pytest.approx(1.4)
    assert report.endpoint == "p1.in0"
    assert sum(1 for e in report.critical_path if e.kind == "hop" and e.delay > 0) == 5
    assert report.critical_path[0].kind == "launch"
    assert sum(e.delay for e in report.critical_path) == pytest.approx(report.total_ns)


def test_zero_hop_net_has_only_overheads():
    """Adjacent registered endpoints: clk-to-q, core, CB, setup and skew"""
    r = straight_route(0)
    lib = DelayLibrary.uniform(r.spec)
    report = critical_path(r, lib)
    expected = lib.reg_clk_to_q_ns + lib.pe_core_ns + lib.cb_in_ns + lib.setup_ns + lib.clock_skew_ns
    assert report.total_ns == pytest.approx(expected)
    assert report.fmax_mhz == pytest.approx(1000.0 / expected)


def test_fully_registered_route_has_one_hop_per_stage():
    """With every hop registered a timing path crosses at most one hop"""
    r = straight_route(5)
    for seg in list(r.routes["p0"]):
        if seg.is_hop:
            r.set_register("p0", seg.resource)
    report = critical_path(r, ideal_lib(r.spec))
    assert sum(1 for e in report.critical_path if e.kind == "hop" and e.delay > 0) <= 1
    assert report.total_ns == pytest.approx(0.7 + 0.14)


def test_slack_at_target_period():
    """Slack is the period minus the worst arrival through the net"""
    r = straight_route(5)
    report = critical_path(r, ideal_lib(r.spec), period=2.0)
    assert report.per_net_slack["p0"] == pytest.approx(0.6)


def _enumerated_arrivals(tg: TimingGraph) -> dict[str, float]:
    """Worst arrival of every endpoint by walking each launch-to-endpoint path"""
    launch_value = {v: sum(e.delay for e in elements) for v, elements in tg.launch.items()}
    sources = set(tg.launch) | {v for v in tg.graph if tg.graph.in_degree(v) == 0}
    worst = {}
    for endpoint in tg.endpoints:
        best = launch_value.get(endpoint, 0.0 if tg.graph.in_degree(endpoint) == 0 else None)
        for source in sources:
            if source == endpoint:
                continue
            for path in nx.all_simple_paths(tg.graph, source, endpoint):
                if any(v in tg.launch for v in path[1:]):
                    continue
                delay = launch_value.get(source, 0.0)
                delay += sum(tg.graph.edges[u, v]["element"].delay for u, v in zip(path, path[1:]))
                best = delay if best is None else max(best, delay)
        worst[endpoint] = best
    return worst


def _assert_arrivals_match(tg: TimingGraph) -> None:
    arrival, _ = tg.arrivals()
    for endpoint, best in _enumerated_arrivals(tg).items():
        assert arrival[endpoint] == pytest.approx(best), endpoint


def test_arrivals_match_path_enumeration():
    """Forward propagation equals the maximum over every enumerated path"""
    spec = ArchSpec.standard(5, 5)
    g = pipe_app(4)
    r = route(g, place(g, spec, PnrParams(seed=2)), spec, PnrParams(seed=2), build_routing_graph(spec))
    _assert_arrivals_match(TimingGraph(r, DelayLibrary.uniform(spec)))


@pytest.mark.parametrize("seed", seed_sweep(500))
def test_random_arrivals_match_path_enumeration(seed, spec8, lib8, rg8):
    """Random DAGs, half of them with registered PE inputs, agree with path enumeration"""
    g = random_dense_dag(seed, n=7)
    if seed % 2:
        g = compute_pipeline(g, spec8)
    r = route(g, spread_placement(g, spec8), spec8, PnrParams(seed=seed), rg8)
    _assert_arrivals_match(TimingGraph(r, lib8))


def test_sparse_checks_every_signal():
    """Sparse designs report the worst of data, valid and ready"""
    spec = ArchSpec.standard(8, 8)
    g = compute_pipeline(vec_add(), spec)
    r = route(g, spread_placement(g, spec), spec, PnrParams(), build_routing_graph(spec))
    lib = DelayLibrary.uniform(spec)
    report = critical_path(r, lib)
    assert report.signal in SIGNALS
    for signal in SIGNALS:
        assert TimingGraph(r, lib, signal).report().total_ns <= report.total_ns + 1e-12


def test_fmax():
    assert fmax_mhz(1.4) == pytest.approx(714.2857, rel=1e-4)
    assert fmax_mhz(0.0) == float("inf")


def test_cycle_arrivals_and_balancing():
    """An unmatched REG branch is balanced with one register on the short side"""
    g = AppGraph()
    g.add_node(Node(id="a", kind=NodeKind.IO_IN))
    g.add_node(Node(id="r", kind=NodeKind.REG))
    g.add_node(Node(id="x", kind=NodeKind.PE, op="add", input_regs=[False, False]))
    g.add_node(Node(id="out", kind=NodeKind.IO_OUT))
    g.add_net(Net(id="a", driver=Pin("a", "out"), sinks=[Pin("x", "in0"), Pin("r", "in0")]))
    g.add_net(Net(id="r", driver=Pin("r", "out"), sinks=[Pin("x", "in1")]))
    g.add_net(Net(id="x", driver=Pin("x", "out"), sinks=[Pin("out", "in0")]))

    arrivals = cycle_arrivals(g)
    assert arrivals.at("x", "in0") == 0
    assert arrivals.at("x", "in1") == 1
    assert balance_targets(g, arrivals) == {Pin("x", "in0"): 1}

    balanced, inserted = balance_branches(g)
    assert inserted == 1
    assert balance_targets(balanced, cycle_arrivals(balanced)) == {}


def test_scheduled_registers_are_not_balanced():
    """REGs that belong to the application's timing do not count"""
    g = pipe_app(1)
    g.splice("in", [Pin("p0", "in0")], Node(id="r", kind=NodeKind.REG, scheduled=True))
    assert cycle_arrivals(g).at("p0") == 0


def test_hardened_flush_arrives_one_cycle_per_row_group(spec8):
    """Hardened wiring adds a registered stage every row group down the column"""
    g = conv3x3(hardened_flush=True)
    r = route(g, place(g, spec8, PnrParams()), spec8, PnrParams(), build_routing_graph(spec8))
    unrouted = cycle_arrivals(g)
    routed = cycle_arrivals(g, r)
    for mem in ("lb0", "lb1"):
        tile = r.tile_of(mem)
        assert routed.at(mem, "flush") - unrouted.at(mem, "flush") == tile[0] // 4 + 1
        assert routed.at(mem) == unrouted.at(mem)
    assert all(pin.port != "flush" for pin in balance_targets(g, routed))

    assert spec8.hardened_latency((0, 3)) == 1
    assert spec8.hardened_latency((7, 3)) == 2
    assert ArchSpec.standard(8, 8, hardened_row_group=2).hardened_latency((7, 3)) == 4
