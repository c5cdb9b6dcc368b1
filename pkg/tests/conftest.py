"""
Shared fixtures and small graph builders
"""
from pathlib import Path

import pytest

from cgrapipe.arch import ArchSpec, DelayLibrary, Side, build_routing_graph
from cgrapipe.dfg import AppGraph, Mode, Net, Node, NodeKind, Pin
from cgrapipe.pnr import Placement
from cgrapipe.route import RoutedApp, Segment, Tap

DATA = Path(__file__).resolve().parent.parent / "data"


def pipe_app(n_pe: int, mode: Mode = Mode.DENSE, op: str = "add") -> AppGraph:
    """in -> p0 -> ... -> p{n-1} -> out, each PE adding a constant"""
    g = AppGraph(mode=mode)
    g.add_node(Node(id="in", kind=NodeKind.IO_IN))
    prev = "in"
    for i in range(n_pe):
        g.add_node(Node(id=f"p{i}", kind=NodeKind.PE, op=op, const=i + 1, input_regs=[False]))
        g.add_net(Net(id=prev, driver=Pin(prev, "out"), sinks=[Pin(f"p{i}", "in0")]))
        prev = f"p{i}"
    g.add_node(Node(id="out", kind=NodeKind.IO_OUT))
    g.add_net(Net(id=prev, driver=Pin(prev, "out"), sinks=[Pin("out", "in0")]))
    return g


def seed_sweep(count: int, fast: int = 5) -> list:
    """Seeds 0..count-1; all but the first `fast` are marked slow"""
    return [s if s < fast else pytest.param(s, marks=pytest.mark.slow) for s in range(count)]


def ideal_lib(spec: ArchSpec, **kwargs) -> DelayLibrary:
    """Uniform 0.14 ns hops with no register, CB or clock overheads"""
    values = dict(cb_in_ns=0.0, reg_clk_to_q_ns=0.0, setup_ns=0.0, clock_skew_ns=0.0)
    values.update(kwargs)
    return DelayLibrary.uniform(spec, hop_ns=0.14, **values)


@pytest.fixture(scope="session")
def spec8() -> ArchSpec:
    return ArchSpec.standard(8, 8)


@pytest.fixture(scope="session")
def lib8(spec8) -> DelayLibrary:
    return DelayLibrary.uniform(spec8)


@pytest.fixture(scope="session")
def rg8(spec8):
    return build_routing_graph(spec8)


@pytest.fixture(scope="session")
def spec6() -> ArchSpec:
    return ArchSpec.standard(6, 6)


@pytest.fixture(scope="session")
def lib6(spec6) -> DelayLibrary:
    return DelayLibrary.uniform(spec6)


def straight_route(hops: int, mode: Mode = Mode.DENSE, **spec_kwargs) -> RoutedApp:
    """Two registered PEs on one row joined by `hops` pass-through hops"""
    spec = ArchSpec.from_rows(["P" * (hops + 2)], io_rows=(), **spec_kwargs)
    g = AppGraph(mode=mode)
    for node_id in ("p0", "p1"):
        g.add_node(Node(id=node_id, kind=NodeKind.PE, op="add", const=1, input_regs=[True]))
    g.add_net(Net(id="p0", driver=Pin("p0", "out"), sinks=[Pin("p1", "in0")]))
    segments = [Segment((0, 0), None, Side.E, 0, 16)]
    segments += [Segment((0, c), Side.W, Side.E, 0, 16) for c in range(1, hops + 1)]
    return RoutedApp(
        spec=spec,
        graph=g,
        placement=Placement(loc={"p0": (0, 0), "p1": (0, hops + 1)}),
        routes={"p0": segments},
        taps={"p0": [Tap("p1", "in0", Side.W, 0)]},
    )
