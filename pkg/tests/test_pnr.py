"""
Tests for simulated-annealing placement
"""
import pytest

from cgrapipe.arch import ArchSpec, TileKind
from cgrapipe.benchmarks import unsharp
from cgrapipe.dfg import Net, Node, NodeKind, Pin
from cgrapipe.errors import CapacityError
from cgrapipe.pnr import (
    TILE_FOR_NODE,
    Placement,
    PnrParams,
    hpwl,
    net_cost,
    place,
    placement_nets,
    wirelength_cost,
)
from tests.conftest import pipe_app


def test_wirelength_cost_formula():
    """(HPWL + gamma * pass_through) ** alpha"""
    params = PnrParams(alpha=1.5, gamma=1.0)
    assert wirelength_cost(3, 2, params) == pytest.approx(5 ** 1.5)
    assert wirelength_cost(3, 2, PnrParams(alpha=1.0, gamma=0.5)) == pytest.approx(4.0)


def test_net_cost_by_hand():
    """Bounding box of 3x4 tiles with both endpoints occupied leaves 10 pass-through tiles"""
    net = Net(id="n", driver=Pin("a", "out"), sinks=[Pin("b", "in0")])
    placement = Placement(loc={"a": (1, 1), "b": (3, 4)})
    assert hpwl(net, placement) == 5
    assert net_cost(net, placement, PnrParams(alpha=1.0, gamma=0.5)) == pytest.approx(10.0)
    assert net_cost(net, placement, PnrParams(alpha=2.0, gamma=0.0)) == pytest.approx(25.0)


def test_placement_is_legal_and_deterministic():
    """Kind-compatible tiles, one node per tile, same result for the same seed"""
    spec = ArchSpec.standard(6, 6)
    g = unsharp()
    first = place(g, spec, PnrParams(seed=7))
    second = place(g, spec, PnrParams(seed=7))
    assert first.loc == second.loc

    placed = [n for n in g.nodes.values() if n.kind in TILE_FOR_NODE]
    assert set(first.loc) == {n.id for n in placed}
    assert len(set(first.loc.values())) == len(placed)
    for node in placed:
        assert spec.kind(first.loc[node.id]) == TILE_FOR_NODE[node.kind]


def test_annealing_does_not_increase_cost():
    """The best placement found is never worse than the random start"""
    spec = ArchSpec.standard(6, 6)
    result = place(pipe_app(8), spec, PnrParams(seed=3))
    assert result.cost <= result.initial_cost + 1e-9


def test_capacity_error():
    """More PEs than PE tiles is reported per kind"""
    spec = ArchSpec.standard(3, 3)
    assert len(spec.tiles_of(TileKind.PE)) == 6
    with pytest.raises(CapacityError) as excinfo:
        place(pipe_app(7), spec)
    assert excinfo.value.deficit == {"PE": 1}


def test_placement_nets_look_through_registers():
    """A REG between two cores merges into one placement net"""
    g = pipe_app(1)
    g.splice("in", [Pin("p0", "in0")], Node(id="r", kind=NodeKind.REG))
    groups = placement_nets(g)
    assert ["in", "p0"] in groups
    assert not any("r" in group for group in groups)
