"""
Application dataflow IR for dense (statically scheduled) and sparse (ready-valid) graphs
"""
import copy
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional

import networkx as nx

from cgrapipe.arch import ArchSpec
from cgrapipe.errors import AppParseError, GraphCycleError

logger = logging.getLogger(__name__)

MASK16 = 0xFFFF


class Mode(str, Enum):
    DENSE = "dense"
    SPARSE = "sparse"


class NodeKind(str, Enum):
    IO_IN = "IO_IN"
    IO_OUT = "IO_OUT"
    PE = "PE"
    MEM = "MEM"
    REG = "REG"
    SHIFT = "SHIFT"
    FIFO = "FIFO"


CORE_KINDS = (NodeKind.IO_IN, NodeKind.IO_OUT, NodeKind.PE, NodeKind.MEM)
FLOATING_KINDS = (NodeKind.REG, NodeKind.SHIFT, NodeKind.FIFO)
CONTROL_PORTS = ("flush",)


def _signed(v: int) -> int:
    v &= MASK16
    return v - 0x10000 if v & 0x8000 else v


def _op_mux(a: int, b: int, sel: int) -> int:
    return b if sel else a


# name -> (arity, function over 16-bit operands)
OPS: dict[str, tuple[int, Callable[..., int]]] = {
    "add": (2, lambda a, b: a + b),
    "sub": (2, lambda a, b: a - b),
    "mul": (2, lambda a, b: a * b),
    "and": (2, lambda a, b: a & b),
    "or": (2, lambda a, b: a | b),
    "xor": (2, lambda a, b: a ^ b),
    "shl": (2, lambda a, b: a << (b & 15)),
    "shr": (2, lambda a, b: _signed(a) >> (b & 15)),
    "gt": (2, lambda a, b: int(_signed(a) > _signed(b))),
    "lt": (2, lambda a, b: int(_signed(a) < _signed(b))),
    "eq": (2, lambda a, b: int((a & MASK16) == (b & MASK16))),
    "mux": (3, _op_mux),
    "abs": (1, lambda a: abs(_signed(a))),
    "min": (2, lambda a, b: min(_signed(a), _signed(b))),
    "max": (2, lambda a, b: max(_signed(a), _signed(b))),
}

# sparse-only reduction: sums every `const` tokens
SPARSE_OPS = {"acc": 1}


def evaluate_op(op: str, operands: list[int], width: int = 16) -> int:
    """Apply a PE opcode; the result is truncated to the net width"""
    _, fn = OPS[op]
    result = fn(*operands) & MASK16
    return result & 1 if width == 1 else result


class Pin(NamedTuple):
    node: str
    port: str

    def __str__(self) -> str:
        return f"{self.node}.{self.port}"


@dataclass
class Node:
    id: str
    kind: NodeKind
    op: Optional[str] = None
    const: Optional[int] = None
    input_regs: list[bool] = field(default_factory=list)
    depth: int = 1
    mem_latency: int = 1
    # latency is part of the application's own timing, not pipelining
    scheduled: bool = False

    @property
    def n_inputs(self) -> int:
        if self.kind == NodeKind.PE:
            arity = OPS[self.op][0] if self.op in OPS else SPARSE_OPS.get(self.op, 2)
            return arity - (1 if self.const is not None and self.op in OPS else 0)
        if self.kind == NodeKind.IO_IN:
            return 0
        return 1

    @property
    def data_ports(self) -> list[str]:
        return [f"in{i}" for i in range(self.n_inputs)]

    @property
    def input_reg_enabled(self) -> bool:
        return any(self.input_regs)

    @property
    def latency_cycles(self) -> int:
        if self.kind == NodeKind.PE:
            return 1 if self.input_reg_enabled else 0
        if self.kind in (NodeKind.REG, NodeKind.FIFO):
            return 1
        if self.kind == NodeKind.SHIFT:
            return self.depth
        if self.kind == NodeKind.MEM:
            return self.mem_latency
        return 0

    @property
    def pipeline_latency(self) -> int:
        """Latency counted by branch delay matching"""
        if self.scheduled or self.kind == NodeKind.MEM:
            return 0
        return self.latency_cycles

    @property
    def is_floating(self) -> bool:
        return self.kind in FLOATING_KINDS


@dataclass
class Net:
    id: str
    driver: Pin
    sinks: list[Pin]
    width: int = 16
    hardened: bool = False

    def is_broadcast(self, threshold: int) -> bool:
        return len(self.sinks) >= threshold


@dataclass
class AppGraph:
    mode: Mode = Mode.DENSE
    nodes: dict[str, Node] = field(default_factory=dict)
    nets: dict[str, Net] = field(default_factory=dict)
    schedules: dict[str, list[int]] = field(default_factory=dict)

    def copy(self) -> "AppGraph":
        return copy.deepcopy(self)

    def add_node(self, node: Node) -> Node:
        self.nodes[node.id] = node
        return node

    def add_net(self, net: Net) -> Net:
        self.nets[net.id] = net
        return net

    def fresh_id(self, prefix: str) -> str:
        n = 0
        while f"{prefix}{n}" in self.nodes or f"{prefix}{n}" in self.nets:
            n += 1
        return f"{prefix}{n}"

    def output_net(self, node_id: str) -> Optional[Net]:
        for net in self.nets.values():
            if net.driver.node == node_id:
                return net
        return None

    def input_net(self, node_id: str, port: str) -> Optional[Net]:
        for net in self.nets.values():
            if Pin(node_id, port) in net.sinks:
                return net
        return None

    def driver_index(self) -> dict[str, Net]:
        return {net.driver.node: net for net in self.nets.values()}

    def sink_index(self) -> dict[Pin, Net]:
        return {pin: net for net in self.nets.values() for pin in net.sinks}

    def nodes_of(self, *kinds: NodeKind) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind in kinds]

    def splice(self, net_id: str, moved: list[Pin], node: Node, new_net_id: Optional[str] = None) -> Net:
        """Insert `node` between net `net_id` and the sinks in `moved`"""
        net = self.nets[net_id]
        self.add_node(node)
        net.sinks = [s for s in net.sinks if s not in moved] + [Pin(node.id, "in0")]
        new_net = Net(
            id=new_net_id or self.fresh_id(f"{net_id}_"),
            driver=Pin(node.id, "out"),
            sinks=list(moved),
            width=net.width,
        )
        return self.add_net(new_net)

    def node_graph(self) -> nx.DiGraph:
        """Node-level connectivity; registers count as ordinary edges"""
        g = nx.DiGraph()
        g.add_nodes_from(sorted(self.nodes))
        for net in self.nets.values():
            for sink in net.sinks:
                g.add_edge(net.driver.node, sink.node)
        return g


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------

def _line_of(text: str, needle: str) -> Optional[int]:
    quoted = f'"{needle}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if quoted in line:
            return number
    return None


def _parse_pin(raw, text: str, where: str) -> Pin:
    if not (isinstance(raw, list) and len(raw) == 2 and all(isinstance(x, str) for x in raw)):
        raise AppParseError(f"{where}: pins are [node, port] pairs", line=_line_of(text, where))
    return Pin(raw[0], raw[1])


def _parse_node(node_id: str, raw: dict, text: str) -> Node:
    try:
        kind = NodeKind(raw["kind"])
    except (KeyError, ValueError) as e:
        raise AppParseError(f"node {node_id!r} has no valid kind", line=_line_of(text, node_id)) from e
    node = Node(id=node_id, kind=kind)
    if kind == NodeKind.PE:
        node.op = raw.get("op")
        if node.op not in OPS and node.op not in SPARSE_OPS:
            raise AppParseError(f"node {node_id!r} has unknown opcode {node.op!r}", line=_line_of(text, node_id))
        node.const = raw.get("const")
        node.input_regs = [bool(x) for x in raw.get("input_regs", [False] * node.n_inputs)]
    if kind in (NodeKind.SHIFT, NodeKind.FIFO):
        node.depth = int(raw.get("depth", 2 if kind == NodeKind.FIFO else 1))
    if kind == NodeKind.MEM:
        node.mem_latency = int(raw.get("latency", 1))
    node.scheduled = bool(raw.get("scheduled", False))
    return node


def parse_app(text: str, spec: Optional[ArchSpec] = None) -> AppGraph:
    """Parse and structurally validate an application file"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise AppParseError(e.msg, line=e.lineno) from e
    if not isinstance(data, dict):
        raise AppParseError("application file must be an object")

    try:
        mode = Mode(data.get("mode", "dense"))
    except ValueError as e:
        raise AppParseError(f"unknown mode {data.get('mode')!r}", line=_line_of(text, "mode")) from e

    g = AppGraph(mode=mode)
    for node_id, raw in (data.get("nodes") or {}).items():
        g.add_node(_parse_node(node_id, raw, text))

    hardened_names = spec.hardened_nets if spec is not None else frozenset()
    for raw in data.get("nets") or []:
        net_id = raw.get("id")
        if not isinstance(net_id, str):
            raise AppParseError("every net needs a string id")
        if net_id in g.nets:
            raise AppParseError(f"duplicate net id {net_id!r}", line=_line_of(text, net_id))
        drivers = raw.get("driver")
        if isinstance(drivers, list) and drivers and isinstance(drivers[0], list):
            if len(drivers) != 1:
                raise AppParseError(f"net {net_id!r} has {len(drivers)} drivers", line=_line_of(text, net_id))
            drivers = drivers[0]
        driver = _parse_pin(drivers, text, net_id)
        sinks = [_parse_pin(s, text, net_id) for s in raw.get("sinks") or []]
        if not sinks:
            raise AppParseError(f"net {net_id!r} has no sinks", line=_line_of(text, net_id))
        width = raw.get("width", 16)
        if width not in (1, 16):
            raise AppParseError(f"net {net_id!r} has width {width}; widths are 1 or 16", line=_line_of(text, net_id))
        hardened = bool(raw.get("hardened", False)) or net_id in hardened_names
        g.add_net(Net(id=net_id, driver=driver, sinks=sinks, width=width, hardened=hardened))

    for node_id, offsets in (data.get("schedules") or {}).items():
        g.schedules[node_id] = [int(o) for o in offsets]

    _check_structure(g, text)
    if g.mode == Mode.DENSE:
        topo_order(g)
    logger.info("parsed %s app: %d nodes, %d nets", g.mode.value, len(g.nodes), len(g.nets))
    return g


def _check_structure(g: AppGraph, text: str) -> None:
    driven: dict[Pin, str] = {}
    drivers: dict[Pin, str] = {}
    for net in g.nets.values():
        line = _line_of(text, net.id)
        if net.driver in drivers:
            raise AppParseError(
                f"pin {net.driver} drives both {drivers[net.driver]!r} and {net.id!r}", line=line
            )
        drivers[net.driver] = net.id
        for pin in [net.driver] + net.sinks:
            if pin.node not in g.nodes:
                raise AppParseError(f"net {net.id!r} references unknown node {pin.node!r}", line=line)
        if net.driver.port != "out" or g.nodes[net.driver.node].kind == NodeKind.IO_OUT:
            raise AppParseError(f"net {net.id!r} is driven by an input pin {net.driver}", line=line)
        for sink in net.sinks:
            if sink in driven:
                raise AppParseError(
                    f"input {sink} is driven by both {driven[sink]!r} and {net.id!r} (multi-driver)", line=line
                )
            driven[sink] = net.id
            node = g.nodes[sink.node]
            legal = node.data_ports + (["flush"] if node.kind == NodeKind.MEM else [])
            if sink.port not in legal:
                raise AppParseError(f"net {net.id!r} drives unknown port {sink}", line=line)
        if net.hardened and net.width != 1:
            raise AppParseError(f"hardened net {net.id!r} must be 1-bit", line=line)
        _check_widths(g, net, line)

    for node in g.nodes.values():
        for port in node.data_ports:
            if Pin(node.id, port) not in driven:
                raise AppParseError(f"input {node.id}.{port} is unconnected", line=_line_of(text, node.id))
        if node.kind == NodeKind.PE and len(node.input_regs) != node.n_inputs:
            raise AppParseError(
                f"node {node.id!r} lists {len(node.input_regs)} input registers for {node.n_inputs} inputs",
                line=_line_of(text, node.id),
            )


def _check_widths(g: AppGraph, net: Net, line: Optional[int]) -> None:
    driver = g.nodes[net.driver.node]
    if driver.kind == NodeKind.MEM and net.width != 16:
        raise AppParseError(f"width mismatch: MEM {driver.id!r} drives 16-bit data, net {net.id!r} is 1-bit", line=line)
    for sink in net.sinks:
        node = g.nodes[sink.node]
        if sink.port == "flush" and net.width != 1:
            raise AppParseError(f"width mismatch: {sink} is 1-bit, net {net.id!r} is {net.width}-bit", line=line)
        if node.kind == NodeKind.MEM and sink.port == "in0" and net.width != 16:
            raise AppParseError(f"width mismatch: {sink} is 16-bit, net {net.id!r} is 1-bit", line=line)
    if driver.is_floating:
        upstream = g.input_net(driver.id, "in0")
        if upstream is not None and upstream.width != net.width:
            raise AppParseError(
                f"width mismatch: {driver.kind.value} {driver.id!r} passes {upstream.width}-bit into {net.width}-bit",
                line=line,
            )


def app_to_dict(g: AppGraph) -> dict:
    nodes = {}
    for node_id in sorted(g.nodes):
        node = g.nodes[node_id]
        raw = {"kind": node.kind.value}
        if node.kind == NodeKind.PE:
            raw["op"] = node.op
            raw["input_regs"] = list(node.input_regs)
            if node.const is not None:
                raw["const"] = node.const
        if node.kind in (NodeKind.SHIFT, NodeKind.FIFO):
            raw["depth"] = node.depth
        if node.kind == NodeKind.MEM:
            raw["latency"] = node.mem_latency
        if node.scheduled:
            raw["scheduled"] = True
        nodes[node_id] = raw
    nets = []
    for net_id in sorted(g.nets):
        net = g.nets[net_id]
        raw = {
            "id": net.id,
            "driver": list(net.driver),
            "sinks": [list(s) for s in sorted(net.sinks)],
            "width": net.width,
        }
        if net.hardened:
            raw["hardened"] = True
        nets.append(raw)
    return {
        "mode": g.mode.value,
        "nodes": nodes,
        "nets": nets,
        "schedules": {k: list(v) for k, v in sorted(g.schedules.items())},
    }


def dump_app(g: AppGraph) -> str:
    """Canonical serialization: sorted keys, node ids and net ids"""
    return json.dumps(app_to_dict(g), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Analyses
# ---------------------------------------------------------------------------

def topo_order(g: AppGraph) -> list[str]:
    """Deterministic topological order, ties broken by node id"""
    ng = g.node_graph()
    try:
        return list(nx.lexicographical_topological_sort(ng, key=str))
    except nx.NetworkXUnfeasible as e:
        cycle = [u for u, _ in nx.find_cycle(ng)]
        raise GraphCycleError(cycle + cycle[:1]) from e


def validate_semantics(g: AppGraph, spec: ArchSpec) -> list[str]:
    """Opcode, depth, mode and hardening checks; violations are returned as data"""
    violations = []
    dense = g.mode == Mode.DENSE
    for node in sorted(g.nodes.values(), key=lambda n: n.id):
        if node.kind == NodeKind.PE:
            if node.op in SPARSE_OPS:
                if dense:
                    violations.append(f"{node.id}: opcode {node.op!r} is sparse-only")
                elif node.const is None or node.const < 1:
                    violations.append(f"{node.id}: {node.op!r} needs a positive const segment length")
            elif node.op not in OPS:
                violations.append(f"{node.id}: illegal opcode {node.op!r}")
            elif node.const is not None and OPS[node.op][0] != 2:
                violations.append(f"{node.id}: opcode {node.op!r} takes no immediate")
            if len(set(node.input_regs)) > 1:
                violations.append(f"{node.id}: input registers must be all enabled or all bypassed")
            if node.input_reg_enabled and spec.pe_input_registers < 1:
                violations.append(f"{node.id}: architecture has no PE input registers")
            if node.input_reg_enabled and not dense:
                violations.append(f"{node.id}: sparse PEs take FIFOs, not input registers")
        elif node.kind == NodeKind.SHIFT:
            if not 1 <= node.depth <= spec.regfile_depth:
                violations.append(f"{node.id}: SHIFT depth {node.depth} outside [1, {spec.regfile_depth}]")
            if not dense:
                violations.append(f"{node.id}: SHIFT is only legal in dense mode")
        elif node.kind == NodeKind.FIFO:
            if dense:
                violations.append(f"{node.id}: FIFO is only legal in sparse mode")
            elif node.depth < 2:
                violations.append(f"{node.id}: FIFO depth {node.depth} must be ≥ 2")
        elif node.kind == NodeKind.REG and not dense:
            violations.append(f"{node.id}: REG breaks ready-valid handshakes; use a FIFO")
        elif node.kind == NodeKind.MEM and not dense:
            violations.append(f"{node.id}: MEM nodes are only supported in dense mode")

    for net in sorted(g.nets.values(), key=lambda n: n.id):
        if net.hardened and net.id not in spec.hardened_nets:
            violations.append(f"{net.id}: hardened net is not declared by the architecture")

    for node_id, offsets in sorted(g.schedules.items()):
        node = g.nodes.get(node_id)
        if node is None or node.kind != NodeKind.MEM:
            violations.append(f"{node_id}: schedules only apply to MEM nodes")
        elif not dense:
            violations.append(f"{node_id}: schedules only apply in dense mode")
        elif any(o < 0 for o in offsets) or any(b <= a for a, b in zip(offsets, offsets[1:])):
            violations.append(f"{node_id}: schedule offsets must be non-negative and increasing")
    return violations
