"""
Tests for the built-in applications and stimulus generators
"""
import pytest

from cgrapipe.arch import ArchSpec
from cgrapipe.benchmarks import (
    DENSE_BENCHMARKS,
    SPARSE_BENCHMARKS,
    benchmark_names,
    conv3x3,
    dense_stimulus,
    load_benchmark,
    random_dense_dag,
    sparse_stimulus,
    spread_placement,
)
from cgrapipe.dfg import Mode, NodeKind, dump_app, parse_app, topo_order, validate_semantics
from cgrapipe.pnr import TILE_FOR_NODE
from cgrapipe.sim import EOS

SPEC = ArchSpec.standard(8, 8)


@pytest.mark.parametrize("name", benchmark_names())
def test_benchmarks_are_valid(name):
    """Every built-in application passes parsing and semantic checks"""
    g = load_benchmark(name)
    assert validate_semantics(g, SPEC) == []
    assert parse_app(dump_app(g), SPEC).nodes.keys() == g.nodes.keys()
    expected = Mode.SPARSE if name in SPARSE_BENCHMARKS else Mode.DENSE
    assert g.mode == expected


def test_unknown_benchmark():
    with pytest.raises(KeyError, match="unknown benchmark"):
        load_benchmark("fft")


def test_benchmark_names():
    assert benchmark_names() == sorted(DENSE_BENCHMARKS) + sorted(SPARSE_BENCHMARKS)


def test_conv_has_hardenable_flush():
    g = conv3x3(hardened_flush=True)
    assert g.nets["flush"].hardened
    assert g.nets["flush"].width == 1
    assert len(g.nodes_of(NodeKind.MEM)) == 2


def test_random_dag_is_deterministic_and_acyclic():
    a, b = random_dense_dag(11), random_dense_dag(11)
    assert dump_app(a) == dump_app(b)
    assert topo_order(a)
    assert a.nodes_of(NodeKind.IO_OUT)


def test_dense_stimulus_respects_widths():
    """1-bit inputs only see 0 and 1"""
    stim = dense_stimulus(conv3x3(), length=20, seed=1)
    assert set(stim.streams) == {"in", "flush"}
    assert set(stim.streams["flush"]) <= {0, 1}
    assert all(0 <= v < 256 for v in stim.streams["in"])
    assert stim.length() == 20


def test_sparse_stimulus_ends_with_eos():
    stim = sparse_stimulus(load_benchmark("vec_add"), length=5, seed=0, bubble_prob=0.5)
    for values in stim.streams.values():
        assert values[-1] is EOS
        assert sum(1 for v in values if isinstance(v, int)) == 5


def test_spread_placement_is_legal():
    """Kind-compatible, one node per tile, inputs and outputs at opposite ends"""
    g = conv3x3()
    placement = spread_placement(g, SPEC)
    placed = [n for n in g.nodes.values() if n.kind in TILE_FOR_NODE]
    assert len(set(placement.loc.values())) == len(placed)
    for node in placed:
        assert SPEC.kind(placement.loc[node.id]) == TILE_FOR_NODE[node.kind]
    assert placement.loc["out"][1] == SPEC.cols - 1
