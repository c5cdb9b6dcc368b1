"""
Synthetic benchmark applications and stimulus generators

Dense apps are desk-scale image-pipeline kernels; sparse apps are
elementwise and reduction kernels over ready-valid streams.
"""
import logging
from typing import Callable, Optional

import numpy as np

from cgrapipe.arch import ArchSpec, TileKind
from cgrapipe.dfg import AppGraph, Mode, Net, Node, NodeKind, Pin
from cgrapipe.errors import CapacityError
from cgrapipe.pnr import TILE_FOR_NODE, Placement
from cgrapipe.sim import EOS, Stimulus

logger = logging.getLogger(__name__)

CONV_WEIGHTS = (1, 2, 1, 2, 4, 2, 1, 2, 1)


class _Builder:
    """Net ids equal the id of their driving node"""

    def __init__(self, mode: Mode = Mode.DENSE):
        self.g = AppGraph(mode=mode)

    def node(self, node_id: str, kind: NodeKind, **fields) -> Node:
        node = self.g.add_node(Node(id=node_id, kind=kind, **fields))
        if kind == NodeKind.PE and not node.input_regs:
            node.input_regs = [False] * node.n_inputs
        return node

    def pe(self, node_id: str, op: str, *operands: str, const: Optional[int] = None) -> Node:
        node = self.node(node_id, NodeKind.PE, op=op, const=const)
        for i, driver in enumerate(operands):
            self.connect(driver, Pin(node_id, f"in{i}"))
        return node

    def connect(self, driver: str, *sinks: Pin, width: int = 16, hardened: bool = False) -> Net:
        net = self.g.nets.get(driver)
        if net is None:
            net = self.g.add_net(Net(id=driver, driver=Pin(driver, "out"), sinks=[], width=width, hardened=hardened))
        net.sinks.extend(sinks)
        return net

    def build(self) -> AppGraph:
        return self.g


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

def conv3x3(width: int = 8, hardened_flush: bool = False) -> AppGraph:
    """Gaussian-like 3x3 convolution over a `width`-pixel line with two line buffers"""
    b = _Builder()
    b.node("in", NodeKind.IO_IN)
    b.node("flush", NodeKind.IO_IN)
    b.node("lb0", NodeKind.MEM, mem_latency=width, scheduled=True)
    b.node("lb1", NodeKind.MEM, mem_latency=width, scheduled=True)
    b.connect("in", Pin("lb0", "in0"))
    b.connect("lb0", Pin("lb1", "in0"))
    b.connect("flush", Pin("lb0", "flush"), Pin("lb1", "flush"), width=1, hardened=hardened_flush)

    products = []
    for row, source in enumerate(("in", "lb0", "lb1")):
        taps = [source, f"t{row}1", f"t{row}2"]
        b.node(taps[1], NodeKind.REG, scheduled=True)
        b.node(taps[2], NodeKind.REG, scheduled=True)
        b.connect(taps[0], Pin(taps[1], "in0"))
        b.connect(taps[1], Pin(taps[2], "in0"))
        for col, tap in enumerate(taps):
            k = 3 * row + col
            b.pe(f"m{k}", "mul", tap, const=CONV_WEIGHTS[k])
            products.append(f"m{k}")

    acc = products[0]
    for i, product in enumerate(products[1:], start=1):
        b.pe(f"a{i}", "add", acc, product)
        acc = f"a{i}"
    b.pe("norm", "shr", acc, const=4)
    b.node("out", NodeKind.IO_OUT)
    b.connect("norm", Pin("out", "in0"))
    return b.build()


def relu() -> AppGraph:
    """Pointwise max(x, 0)"""
    b = _Builder()
    b.node("in", NodeKind.IO_IN)
    b.pe("relu", "max", "in", const=0)
    b.node("out", NodeKind.IO_OUT)
    b.connect("relu", Pin("out", "in0"))
    return b.build()


def unsharp() -> AppGraph:
    """Two-stage sharpen: a 1-2-1 blur, then x + (x - blur)"""
    b = _Builder()
    b.node("in", NodeKind.IO_IN)
    b.node("x1", NodeKind.REG, scheduled=True)
    b.node("x2", NodeKind.REG, scheduled=True)
    b.connect("in", Pin("x1", "in0"))
    b.connect("x1", Pin("x2", "in0"))
    b.pe("s1", "add", "in", "x2")
    b.pe("d", "shl", "x1", const=1)
    b.pe("s2", "add", "s1", "d")
    b.pe("blur", "shr", "s2", const=2)
    b.pe("diff", "sub", "x1", "blur")
    b.pe("sharp", "add", "x1", "diff")
    b.node("out", NodeKind.IO_OUT)
    b.connect("sharp", Pin("out", "in0"))
    return b.build()


_DAG_OPS = ("add", "sub", "mul", "and", "or", "xor", "min", "max")


def random_dense_dag(seed: int, n: int = 20, n_inputs: int = 2, reg_prob: float = 0.15) -> AppGraph:
    """Random combinational DAG of about `n` nodes

    Delays come only from scheduled REGs, so the graph has no pipeline
    latency before any pass runs. Nodes left without a reader get an IO_OUT.
    """
    rng = np.random.default_rng(seed)
    b = _Builder()
    values = []
    for i in range(n_inputs):
        b.node(f"in{i}", NodeKind.IO_IN)
        values.append(f"in{i}")
    for i in range(max(n - n_inputs, 1)):
        if rng.random() < reg_prob:
            b.node(f"r{i}", NodeKind.REG, scheduled=True)
            b.connect(values[int(rng.integers(len(values)))], Pin(f"r{i}", "in0"))
            values.append(f"r{i}")
            continue
        op = _DAG_OPS[int(rng.integers(len(_DAG_OPS)))]
        if rng.random() < 0.25:
            b.pe(f"p{i}", op, values[int(rng.integers(len(values)))], const=int(rng.integers(1, 8)))
        else:
            a, c = rng.integers(len(values), size=2)
            b.pe(f"p{i}", op, values[int(a)], values[int(c)])
        values.append(f"p{i}")

    g = b.g
    for value in values:
        net = g.nets.get(value)
        if net is None or not net.sinks:
            b.node(f"o_{value}", NodeKind.IO_OUT)
            b.connect(value, Pin(f"o_{value}", "in0"))
    return b.build()


# ---------------------------------------------------------------------------
# Sparse
# ---------------------------------------------------------------------------

def _sparse_binary(op: str) -> AppGraph:
    b = _Builder(Mode.SPARSE)
    b.node("a", NodeKind.IO_IN)
    b.node("b", NodeKind.IO_IN)
    b.pe(op, op, "a", "b")
    b.node("out", NodeKind.IO_OUT)
    b.connect(op, Pin("out", "in0"))
    return b.build()


def vec_add() -> AppGraph:
    """Elementwise vector add"""
    return _sparse_binary("add")


def mat_mul_ew() -> AppGraph:
    """Elementwise matrix multiply over a row-major stream"""
    return _sparse_binary("mul")


def ttv(k: int = 4) -> AppGraph:
    """Tensor-times-vector: elementwise products reduced over fibers of length `k`"""
    b = _Builder(Mode.SPARSE)
    b.node("t", NodeKind.IO_IN)
    b.node("v", NodeKind.IO_IN)
    b.pe("mul", "mul", "t", "v")
    b.pe("acc", "acc", "mul", const=k)
    b.node("out", NodeKind.IO_OUT)
    b.connect("acc", Pin("out", "in0"))
    return b.build()


DENSE_BENCHMARKS: dict[str, Callable[[], AppGraph]] = {
    "conv3x3": conv3x3,
    "relu": relu,
    "unsharp": unsharp,
}

SPARSE_BENCHMARKS: dict[str, Callable[[], AppGraph]] = {
    "vec_add": vec_add,
    "mat_mul_ew": mat_mul_ew,
    "ttv": ttv,
}


def benchmark_names() -> list[str]:
    return sorted(DENSE_BENCHMARKS) + sorted(SPARSE_BENCHMARKS)


def load_benchmark(name: str) -> AppGraph:
    builder = DENSE_BENCHMARKS.get(name) or SPARSE_BENCHMARKS.get(name)
    if builder is None:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(benchmark_names())}")
    return builder()


# ---------------------------------------------------------------------------
# Stimuli and fixed placements
# ---------------------------------------------------------------------------

def _input_widths(g: AppGraph) -> dict[str, int]:
    driver_of = g.driver_index()
    return {n.id: driver_of[n.id].width if n.id in driver_of else 16 for n in g.nodes_of(NodeKind.IO_IN)}


def dense_stimulus(g: AppGraph, length: int = 32, seed: int = 0, high: int = 256) -> Stimulus:
    """Random values for every IO_IN; 1-bit inputs get 0 or 1"""
    rng = np.random.default_rng(seed)
    streams = {}
    for node_id, width in sorted(_input_widths(g).items()):
        top = 2 if width == 1 else high
        streams[node_id] = [int(v) for v in rng.integers(0, top, size=length)]
    return Stimulus(streams)


def sparse_stimulus(
    g: AppGraph,
    length: int = 16,
    seed: int = 0,
    high: int = 64,
    bubble_prob: float = 0.0,
) -> Stimulus:
    """Equal-length token streams terminated by end-of-stream, with optional bubbles"""
    rng = np.random.default_rng(seed)
    streams = {}
    for node_id in sorted(_input_widths(g)):
        stream: list = []
        for v in rng.integers(0, high, size=length):
            while bubble_prob and rng.random() < bubble_prob:
                stream.append(None)
            stream.append(int(v))
        stream.append(EOS)
        streams[node_id] = stream
    return Stimulus(streams)


def spread_placement(g: AppGraph, spec: ArchSpec) -> Placement:
    """Deterministic far-apart placement: inputs left, outputs right, compute at the bottom

    Gives worst-case route lengths, the situation interconnect pipelining exists for.
    """
    io_tiles = sorted(spec.tiles_of(TileKind.IO), key=lambda t: (t[1], t[0]))
    loc = {}
    inputs = sorted(n.id for n in g.nodes_of(NodeKind.IO_IN))
    outputs = sorted(n.id for n in g.nodes_of(NodeKind.IO_OUT))
    if len(inputs) + len(outputs) > len(io_tiles):
        raise CapacityError({TileKind.IO.value: len(inputs) + len(outputs) - len(io_tiles)})
    for node_id, tile in zip(inputs, io_tiles):
        loc[node_id] = tile
    for node_id, tile in zip(outputs, reversed(io_tiles)):
        loc[node_id] = tile
    for kind in (NodeKind.PE, NodeKind.MEM):
        tiles = sorted(spec.tiles_of(TILE_FOR_NODE[kind]), key=lambda t: (-t[0], t[1]))
        members = sorted(n.id for n in g.nodes_of(kind))
        if len(members) > len(tiles):
            raise CapacityError({TILE_FOR_NODE[kind].value: len(members) - len(tiles)})
        for node_id, tile in zip(members, tiles):
            loc[node_id] = tile
    return Placement(loc=loc)

