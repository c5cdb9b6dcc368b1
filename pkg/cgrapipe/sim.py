"""
Cycle-accurate functional simulation, the correctness oracle for every transformation
"""
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

from cgrapipe.dfg import MASK16, OPS, AppGraph, Mode, Node, NodeKind, Pin, evaluate_op, topo_order
from cgrapipe.errors import SimulationError
from cgrapipe.route import RoutedApp
from cgrapipe.sta import balance_targets, cycle_arrivals

logger = logging.getLogger(__name__)


class _EndOfStream:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EOS"


EOS = _EndOfStream()

Token = Union[int, _EndOfStream]


@dataclass
class Stimulus:
    """Input streams per IO_IN; sparse streams may hold None for a cycle without a token"""
    streams: dict[str, list] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "Stimulus":
        streams = data.get("streams", data)
        return cls({k: [EOS if v == "EOS" else v for v in values] for k, values in streams.items()})

    @classmethod
    def from_json(cls, text: str) -> "Stimulus":
        return cls.from_dict(json.loads(text))

    def length(self) -> int:
        return max((len(v) for v in self.streams.values()), default=0)


@dataclass
class TraceResult:
    outputs: dict[str, list] = field(default_factory=dict)
    cycles_executed: int = 0
    deadlock: bool = False
    warnings: list[str] = field(default_factory=list)

    def defined(self, port: str) -> list:
        return [v for v in self.outputs.get(port, []) if v is not None]

    def to_dict(self) -> dict:
        return {
            "outputs": {k: ["EOS" if v is EOS else v for v in vals] for k, vals in sorted(self.outputs.items())},
            "cycles_executed": self.cycles_executed,
            "deadlock": self.deadlock,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _split(design: Union[AppGraph, RoutedApp]) -> tuple[AppGraph, dict[tuple[str, Pin], int]]:
    if isinstance(design, RoutedApp):
        return design.graph, design.register_counts()
    return design, {}


def _operands(node: Node, inputs: list) -> list:
    operands = list(inputs)
    if node.const is not None and node.op in OPS:
        operands.append(node.const & MASK16)
    return operands


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

class _DenseSim:
    """Two-phase synchronous evaluation; None is an undefined value"""

    def __init__(self, g: AppGraph, registers: dict[tuple[str, Pin], int]):
        self.g = g
        self.order = topo_order(g)
        self.driver_of = g.driver_index()
        self.sink_of = g.sink_index()
        self.lines: dict[tuple[str, Pin], deque] = {
            key: deque([None] * k) for key, k in registers.items() if k > 0
        }
        self.state: dict[str, deque] = {}
        self.mem_out: dict[str, dict[int, Optional[int]]] = {}
        for node in g.nodes.values():
            if node.kind == NodeKind.PE and node.input_reg_enabled:
                self.state[node.id] = deque([[None] * node.n_inputs])
            elif node.kind in (NodeKind.REG, NodeKind.SHIFT):
                self.state[node.id] = deque([None] * node.latency_cycles)
            elif node.kind == NodeKind.MEM:
                self.mem_out[node.id] = {}

    def _pin_value(self, pin: Pin, out: dict[str, Optional[int]]) -> Optional[int]:
        net = self.sink_of.get(pin)
        if net is None:
            return None
        line = self.lines.get((net.id, pin))
        return line[0] if line is not None else out.get(net.driver.node)

    def _width(self, node_id: str) -> int:
        net = self.driver_of.get(node_id)
        return net.width if net is not None else 16

    def step(self, t: int, stim: Stimulus, outputs: dict[str, list]) -> None:
        out: dict[str, Optional[int]] = {}
        pins: dict[Pin, Optional[int]] = {}
        for node_id in self.order:
            node = self.g.nodes[node_id]
            for port in node.data_ports:
                pins[Pin(node_id, port)] = self._pin_value(Pin(node_id, port), out)
            inputs = [pins[Pin(node_id, p)] for p in node.data_ports]
            if node.kind == NodeKind.IO_IN:
                stream = stim.streams.get(node_id, [])
                out[node_id] = stream[t] if t < len(stream) else None
            elif node.kind == NodeKind.IO_OUT:
                outputs[node_id].append(inputs[0])
            elif node.kind == NodeKind.PE:
                if node.input_reg_enabled:
                    inputs = self.state[node_id][0]
                if any(v is None for v in inputs):
                    out[node_id] = None
                else:
                    out[node_id] = evaluate_op(node.op, _operands(node, inputs), self._width(node_id))
            elif node.kind in (NodeKind.REG, NodeKind.SHIFT):
                out[node_id] = self.state[node_id][0]
            elif node.kind == NodeKind.MEM:
                out[node_id] = self.mem_out[node_id].pop(t, None)
            else:
                raise SimulationError(f"{node.kind.value} node {node_id} cannot run in a dense simulation")

        # phase two: every state element captures its input
        for (net_id, pin), line in self.lines.items():
            line.popleft()
            line.append(out.get(self.g.nets[net_id].driver.node))
        for node_id, state in self.state.items():
            node = self.g.nodes[node_id]
            inputs = [pins[Pin(node_id, p)] for p in node.data_ports]
            state.popleft()
            state.append(inputs if node.kind == NodeKind.PE else inputs[0])
        for node_id, emit in self.mem_out.items():
            node = self.g.nodes[node_id]
            schedule = self.g.schedules.get(node_id)
            if schedule is None or t in schedule:
                emit[t + node.mem_latency] = pins[Pin(node_id, "in0")]


def _horizon(g: AppGraph, stim: Stimulus, registers: dict) -> int:
    latency = sum(n.latency_cycles for n in g.nodes.values()) + sum(registers.values())
    last_offset = max((max(s) for s in g.schedules.values() if s), default=0)
    return stim.length() + latency + last_offset + 1


def simulate_dense(
    design: Union[AppGraph, RoutedApp],
    stim: Stimulus,
    max_cycles: int = 100_000,
    cycles: Optional[int] = None,
) -> TraceResult:
    """Run until every input has drained through the deepest latency path"""
    g, registers = _split(design)
    if g.mode != Mode.DENSE:
        raise SimulationError("simulate_dense needs a dense design")
    cycles = cycles if cycles is not None else _horizon(g, stim, registers)
    if cycles > max_cycles:
        raise SimulationError(f"simulation needs {cycles} cycles, limit is {max_cycles}")

    sim = _DenseSim(g, registers)
    result = TraceResult(outputs={n.id: [] for n in g.nodes_of(NodeKind.IO_OUT)})
    for t in range(cycles):
        sim.step(t, stim, result.outputs)
    result.cycles_executed = cycles
    routed = design if isinstance(design, RoutedApp) else None
    for pin, deficit in sorted(balance_targets(g, cycle_arrivals(g, routed)).items()):
        result.warnings.append(f"arrival mismatch at {pin}: early by {deficit} cycles")
    return result


# ---------------------------------------------------------------------------
# Sparse
# ---------------------------------------------------------------------------

class _SparseSim:
    """Ready-valid network; a transfer happens on every channel whose valid and ready are both high

    Switch-box registers on a sparse route capture every cycle and pass
    ready straight through, so they are modeled as lossy delay lines.
    """

    def __init__(self, g: AppGraph, registers: dict[tuple[str, Pin], int], stim: Stimulus):
        self.g = g
        self.driver_of = g.driver_index()
        self.sink_of = g.sink_index()
        self.sources = {n.id: deque(stim.streams.get(n.id, [EOS])) for n in g.nodes_of(NodeKind.IO_IN)}
        self.fifos = {n.id: deque() for n in g.nodes_of(NodeKind.FIFO)}
        self.acc = {n.id: [0, 0] for n in g.nodes.values() if n.kind == NodeKind.PE and n.op == "acc"}
        self.lines = {key: deque([None] * k) for key, k in registers.items() if k > 0}
        self.outputs: dict[str, list] = {n.id: [] for n in g.nodes_of(NodeKind.IO_OUT)}
        for node in g.nodes.values():
            if node.kind not in (NodeKind.IO_IN, NodeKind.IO_OUT, NodeKind.PE, NodeKind.FIFO):
                raise SimulationError(f"{node.kind.value} node {node.id} cannot run in a sparse simulation")

    def _width(self, node_id: str) -> int:
        net = self.driver_of.get(node_id)
        return net.width if net is not None else 16

    # values offered this cycle

    def _offer_out(self, node_id: str, memo: dict) -> Optional[Token]:
        """Token a node presents on its output, or None when not valid"""
        if node_id in memo:
            return memo[node_id]
        memo[node_id] = None
        node = self.g.nodes[node_id]
        value: Optional[Token] = None
        if node.kind == NodeKind.IO_IN:
            queue = self.sources[node_id]
            value = queue[0] if queue else None
        elif node.kind == NodeKind.FIFO:
            queue = self.fifos[node_id]
            value = queue[0] if queue else None
        elif node.kind == NodeKind.PE:
            inputs = [self._offer_pin(Pin(node_id, p), memo) for p in node.data_ports]
            value = self._pe_output(node, inputs)
        memo[node_id] = value
        return value

    def _offer_pin(self, pin: Pin, memo: dict) -> Optional[Token]:
        net = self.sink_of[pin]
        line = self.lines.get((net.id, pin))
        if line is not None:
            return line[-1]
        return self._offer_out(net.driver.node, memo)

    def _mode(self, node: Node, inputs: list) -> str:
        """wait, emit, drop (values facing an end-of-stream), absorb or flush (accumulator)"""
        if any(v is None for v in inputs):
            return "wait"
        if node.op == "acc":
            count = self.acc[node.id][0]
            if inputs[0] is EOS:
                return "flush" if count else "emit"
            return "emit" if count + 1 == node.const else "absorb"
        if any(v is EOS for v in inputs) and not all(v is EOS for v in inputs):
            return "drop"
        return "emit"

    def _pe_output(self, node: Node, inputs: list) -> Optional[Token]:
        mode = self._mode(node, inputs)
        if node.op == "acc":
            count, total = self.acc[node.id]
            if mode == "flush":
                return total & MASK16
            if mode == "emit":
                return EOS if inputs[0] is EOS else (total + inputs[0]) & MASK16
            return None
        if mode != "emit":
            return None
        if inputs[0] is EOS:
            return EOS
        return evaluate_op(node.op, _operands(node, inputs), self._width(node.id))

    # handshake resolution

    def _arrives(self, pin: Pin, go: dict[str, bool]) -> bool:
        net = self.sink_of[pin]
        return (net.id, pin) in self.lines or go[net.driver.node]

    def _resolve(self, memo: dict) -> tuple[dict[str, bool], dict[Pin, bool], dict[str, str]]:
        """Greatest fixpoint of node transfers and pin readiness"""
        g = self.g
        offers = {pin: self._offer_pin(pin, memo) for pin in self.sink_of}
        modes = {
            node.id: self._mode(node, [offers[Pin(node.id, p)] for p in node.data_ports])
            for node in g.nodes_of(NodeKind.PE)
        }
        go = {n: g.nodes[n].kind != NodeKind.IO_OUT for n in g.nodes}
        while True:
            ready: dict[Pin, bool] = {}
            for pin, value in offers.items():
                node = g.nodes[pin.node]
                if node.kind == NodeKind.IO_OUT:
                    ready[pin] = True
                elif node.kind == NodeKind.FIFO:
                    ready[pin] = len(self.fifos[node.id]) < node.depth
                else:
                    mode = modes[node.id]
                    if mode == "drop":
                        ready[pin] = value is not EOS
                    else:
                        ready[pin] = mode in ("emit", "absorb") and go[node.id]
            changed = False
            for node_id, node in g.nodes.items():
                if go[node_id] and not self._can_go(node, modes, ready, go, memo):
                    go[node_id] = False
                    changed = True
            if not changed:
                return go, ready, modes

    def _can_go(self, node: Node, modes: dict, ready: dict, go: dict, memo: dict) -> bool:
        net = self.driver_of.get(node.id)
        sinks_ready = net is None or all(ready[p] for p in net.sinks)
        if node.kind in (NodeKind.IO_IN, NodeKind.FIFO):
            return self._offer_out(node.id, memo) is not None and sinks_ready
        if node.kind != NodeKind.PE:
            return False
        inputs_arrive = all(self._arrives(Pin(node.id, p), go) for p in node.data_ports)
        mode = modes[node.id]
        if mode == "emit":
            return sinks_ready and inputs_arrive
        if mode == "flush":
            return sinks_ready
        if mode == "absorb":
            return inputs_arrive
        return False

    def step(self) -> bool:
        memo: dict = {}
        go, ready, modes = self._resolve(memo)
        offers = {pin: self._offer_pin(pin, memo) for pin in self.sink_of}
        emitted = {n: self._offer_out(n, memo) for n in self.g.nodes if go[n]}
        progress = False

        # a bubble still uses up its cycle of the stream
        for queue in self.sources.values():
            if queue and queue[0] is None:
                queue.popleft()
                progress = True

        pushes: list[tuple[str, Token]] = []
        for pin, value in offers.items():
            if value is None or not ready[pin] or not self._arrives(pin, go):
                continue
            progress = True
            node = self.g.nodes[pin.node]
            if node.kind == NodeKind.IO_OUT:
                self.outputs[node.id].append(value)
            elif node.kind == NodeKind.FIFO:
                pushes.append((node.id, value))

        for node_id, node in self.g.nodes.items():
            if not go[node_id]:
                continue
            progress = True
            if node.kind == NodeKind.IO_IN:
                self.sources[node_id].popleft()
            elif node.kind == NodeKind.FIFO:
                self.fifos[node_id].popleft()
            elif node.op == "acc":
                state = self.acc[node_id]
                if modes[node_id] == "absorb":
                    state[0] += 1
                    state[1] = (state[1] + offers[Pin(node_id, "in0")]) & MASK16
                else:
                    state[0], state[1] = 0, 0
        for node_id, value in pushes:
            self.fifos[node_id].append(value)

        for (net_id, pin), line in self.lines.items():
            driver = self.g.nets[net_id].driver.node
            if any(v is not None for v in line):
                progress = True
            line.pop()
            line.appendleft(emitted.get(driver))
        return progress

    def done(self) -> bool:
        return all(vals and vals[-1] is EOS for vals in self.outputs.values())


def simulate_sparse(
    design: Union[AppGraph, RoutedApp],
    stim: Stimulus,
    max_cycles: int = 100_000,
    quiescence: Optional[int] = None,
) -> TraceResult:
    """Run until every output has seen end-of-stream or the network stops moving"""
    g, registers = _split(design)
    if g.mode != Mode.SPARSE:
        raise SimulationError("simulate_sparse needs a sparse design")
    sim = _SparseSim(g, registers, stim)
    window = quiescence or (16 + sum(registers.values()) + sum(n.depth for n in g.nodes_of(NodeKind.FIFO)))
    idle, t = 0, 0
    result = TraceResult()
    while not sim.done():
        if t >= max_cycles:
            raise SimulationError(f"sparse simulation exceeded {max_cycles} cycles")
        idle = 0 if sim.step() else idle + 1
        t += 1
        if idle >= window:
            result.deadlock = True
            logger.warning("sparse simulation stalled for %d cycles at cycle %d", idle, t)
            break
    result.outputs = {k: [v for v in vals if v is not EOS] for k, vals in sim.outputs.items()}
    result.cycles_executed = t
    return result


def simulate(design: Union[AppGraph, RoutedApp], stim: Stimulus, max_cycles: int = 100_000) -> TraceResult:
    g = design.graph if isinstance(design, RoutedApp) else design
    if g.mode == Mode.SPARSE:
        return simulate_sparse(design, stim, max_cycles)
    return simulate_dense(design, stim, max_cycles)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def _trim(values: list) -> list:
    end = len(values)
    while end and values[end - 1] is None:
        end -= 1
    return values[:end]


def equivalent_modulo_latency(a: TraceResult, b: TraceResult) -> tuple[bool, Optional[int]]:
    """True when every output of b is a's output delayed by one common offset ≥ 0

    Undefined values before the first defined one and after the last are
    ignored; everything between must match exactly. A trace that deadlocked
    is never equivalent.
    """
    if a.deadlock or b.deadlock:
        return False, None
    if set(a.outputs) != set(b.outputs):
        return False, None
    offset: Optional[int] = None
    for port in sorted(a.outputs):
        va, vb = _trim(a.outputs[port]), _trim(b.outputs[port])
        fa = next((i for i, v in enumerate(va) if v is not None), None)
        fb = next((i for i, v in enumerate(vb) if v is not None), None)
        if fa is None or fb is None:
            if fa is not fb:
                return False, None
            continue
        shift = fb - fa
        if shift < 0 or (offset is not None and shift != offset):
            return False, None
        offset = shift
        if va[fa:] != vb[fb:]:
            return False, None
    return True, offset or 0
