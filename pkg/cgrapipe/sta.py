"""
Static timing analysis on routed applications and cycle-level arrival analysis

The physical analysis builds a timing graph whose vertices are pins, tile
outputs and switch-box outputs. Registers split it into combinational
regions; arrival times propagate forward in topological order.
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import networkx as nx

from cgrapipe.arch import DelayLibrary
from cgrapipe.dfg import CONTROL_PORTS, AppGraph, Mode, Node, NodeKind, Pin, topo_order
from cgrapipe.errors import TimingError
from cgrapipe.route import RoutedApp, Segment

logger = logging.getLogger(__name__)

SIGNALS = ("data", "valid", "ready")


class PathElement(NamedTuple):
    """One term of a timing path; kind is launch, core, hop, cb or local"""
    kind: str
    label: str
    delay: float
    net: Optional[str] = None
    segment: Optional[Segment] = None


@dataclass
class TimingReport:
    critical_path: list[PathElement]
    total_ns: float
    fmax_mhz: float
    per_net_slack: dict[str, float] = field(default_factory=dict)
    period_ns: float = 0.0
    endpoint: Optional[str] = None
    signal: str = "data"
    # endpoints whose arrival ties the critical one
    critical_endpoints: int = 0

    def to_dict(self) -> dict:
        return {
            "critical_path": [
                {"kind": e.kind, "label": e.label, "delay_ns": e.delay, "net": e.net}
                for e in self.critical_path
            ],
            "total_ns": self.total_ns,
            "fmax_mhz": self.fmax_mhz,
            "period_ns": self.period_ns,
            "signal": self.signal,
            "endpoint": self.endpoint,
            "per_net_slack": dict(sorted(self.per_net_slack.items())),
        }


def fmax_mhz(total_ns: float) -> float:
    return 1000.0 / total_ns if total_ns > 0 else float("inf")


def _seg_key(net_id: str, seg: Segment) -> str:
    return f"{net_id}@{seg.label()}"


class TimingGraph:
    """Timing graph for one signal of a routed application"""

    def __init__(self, r: RoutedApp, lib: DelayLibrary, signal: str = "data"):
        if signal not in SIGNALS:
            raise ValueError(f"unknown signal {signal!r}")
        self.r = r
        self.lib = lib
        self.signal = signal
        self.reverse = signal == "ready"
        self.graph = nx.DiGraph()
        self.launch: dict[str, list[PathElement]] = {}
        self.endpoints: set[str] = set()
        self._build()

    def _edge(self, u: str, v: str, element: PathElement) -> None:
        if self.reverse:
            u, v = v, u
        self.graph.add_edge(u, v, element=element)

    def _hop(self, seg: Segment) -> float:
        kind = self.r.spec.kind(seg.tile)
        width = seg.width if self.signal == "data" else 1
        entry, exit_side = (seg.exit, seg.entry) if self.reverse else (seg.entry, seg.exit)
        try:
            return self.lib.hop(kind, entry, exit_side, width)
        except KeyError as e:
            raise TimingError(f"no delay for hop class {kind.value}:{entry.value}:{exit_side.value}:{width}") from e

    def _build(self) -> None:
        for net in sorted(self.r.graph.nets.values(), key=lambda n: n.id):
            if not net.hardened:
                self._add_net(net.id)
        for node in sorted(self.r.graph.nodes.values(), key=lambda n: n.id):
            if self.reverse:
                self._add_node_ready(node)
            else:
                self._add_node(node)

    def _add_net(self, net_id: str) -> None:
        r = self.r
        net = r.graph.nets[net_id]
        segments = r.routes.get(net_id, [])
        by_resource = {s.resource: s for s in segments}
        driver = f"{net.driver.node}.out"
        self.graph.add_node(driver)
        split = not self.reverse

        def source(seg: Segment) -> str:
            key = _seg_key(net_id, seg)
            return key + "/q" if seg.register_enabled and split else key

        for seg in sorted(segments, key=lambda s: s.label()):
            key = _seg_key(net_id, seg)
            if seg.entry is None:
                self._edge(driver, key, PathElement("hop", seg.label(), 0.0, net_id, seg))
            else:
                parent = by_resource[(r.spec.neighbor(seg.tile, seg.entry), seg.entry.opposite, seg.track, seg.width)]
                self._edge(source(parent), key, PathElement("hop", seg.label(), self._hop(seg), net_id, seg))
            if seg.register_enabled and split:
                self.endpoints.add(key)
                self.launch[key + "/q"] = [PathElement("launch", seg.label(), self.lib.reg_clk_to_q_ns, net_id, seg)]
                self.graph.add_node(key + "/q")

        for tap in sorted(r.taps.get(net_id, []), key=str):
            pin = f"{tap.node}.{tap.port}"
            if tap.side is None:
                self._edge(driver, pin, PathElement("local", f"{net.driver.node}->{pin}", 0.0, net_id))
            else:
                tile = r.tile_of(tap.node)
                feeder = by_resource[(r.spec.neighbor(tile, tap.side), tap.side.opposite, tap.track, net.width)]
                self._edge(source(feeder), pin, PathElement("cb", f"cb {pin}", self.lib.cb_in_ns, net_id))

    def _input_pins(self, node: Node) -> list[str]:
        pins = [f"{node.id}.{p}" for p in node.data_ports]
        if node.kind == NodeKind.MEM:
            flush = self.r.graph.input_net(node.id, "flush")
            if flush is not None and not flush.hardened:
                pins.append(f"{node.id}.flush")
        return pins

    def _add_node(self, node: Node) -> None:
        lib = self.lib
        out = f"{node.id}.out"
        pins = self._input_pins(node)
        clk_q = PathElement("launch", f"{node.id} register", lib.reg_clk_to_q_ns)
        if node.kind == NodeKind.IO_IN:
            self.launch[out] = []
        elif node.kind == NodeKind.IO_OUT:
            self.endpoints.update(pins)
        elif node.kind == NodeKind.PE:
            core = PathElement("core", f"{node.id} core", lib.pe_core_ns if self.signal == "data" else 0.0)
            # the accumulator keeps its partial sum in a register
            if node.input_reg_enabled or node.op == "acc":
                self.endpoints.update(pins)
                self.launch[out] = [clk_q, core]
            elif not pins:
                self.launch[out] = [core]
            else:
                for pin in pins:
                    self._edge(pin, out, core)
        elif node.kind == NodeKind.MEM:
            self.endpoints.update(pins)
            self.launch[out] = [clk_q, PathElement("core", f"{node.id} core", lib.mem_core_ns)]
        else:
            self.endpoints.update(pins)
            self.launch[out] = [clk_q]
        for key in pins + [out]:
            self.graph.add_node(key)

    def _add_node_ready(self, node: Node) -> None:
        # ready runs from sinks back to drivers; only FIFOs and IO hold it in a register
        out = f"{node.id}.out"
        pins = self._input_pins(node)
        if node.kind == NodeKind.IO_OUT:
            for pin in pins:
                self.launch[pin] = []
        elif node.kind == NodeKind.IO_IN:
            self.endpoints.add(out)
        elif node.kind == NodeKind.FIFO:
            self.endpoints.add(out)
            for pin in pins:
                self.launch[pin] = [PathElement("launch", f"{node.id} occupancy", self.lib.reg_clk_to_q_ns)]
        else:
            for pin in pins:
                self._edge(pin, out, PathElement("core", f"{node.id} ready", 0.0))
        for key in pins + [out]:
            self.graph.add_node(key)

    def arrivals(self) -> tuple[dict[str, float], dict[str, Optional[str]]]:
        """Forward arrival times and the chosen predecessor of every vertex"""
        try:
            order = list(nx.lexicographical_topological_sort(self.graph, key=str))
        except nx.NetworkXUnfeasible as e:
            cycle = [u for u, _ in nx.find_cycle(self.graph)]
            raise TimingError("combinational cycle: " + " -> ".join(cycle + cycle[:1])) from e
        arrival: dict[str, float] = {}
        best: dict[str, Optional[str]] = {}
        for v in order:
            if v in self.launch:
                total = 0.0
                for element in self.launch[v]:
                    total += element.delay
                arrival[v], best[v] = total, None
                continue
            candidates = [(arrival[u] + d["element"].delay, u) for u, _, d in self.graph.in_edges(v, data=True)]
            if not candidates:
                arrival[v], best[v] = 0.0, None
                continue
            value, pred = min(candidates, key=lambda c: (-c[0], c[1]))
            arrival[v], best[v] = value, pred
        return arrival, best

    def path_to(self, endpoint: str, best: dict[str, Optional[str]]) -> list[PathElement]:
        elements = []
        v = endpoint
        while best.get(v) is not None:
            u = best[v]
            elements.append(self.graph.edges[u, v]["element"])
            v = u
        elements.extend(reversed(self.launch.get(v, [])))
        elements.reverse()
        return elements

    def slack(self, arrival: dict[str, float], period: float) -> dict[str, float]:
        """Worst slack of every routed net at `period`"""
        lib = self.lib
        required: dict[str, float] = {}
        for v in reversed(list(nx.lexicographical_topological_sort(self.graph, key=str))):
            req = period - lib.setup_ns - lib.clock_skew_ns if v in self.endpoints else float("inf")
            for _, w, d in self.graph.out_edges(v, data=True):
                if w in self.launch:
                    continue
                req = min(req, required[w] - d["element"].delay)
            required[v] = req
        slack: dict[str, float] = {}
        for u, v, d in self.graph.edges(data=True):
            net = d["element"].net
            if net is None or v in self.launch:
                continue
            s = required[v] - arrival[u] - d["element"].delay
            slack[net] = min(slack.get(net, float("inf")), s)
        return slack

    def report(self, period: Optional[float] = None) -> TimingReport:
        arrival, best = self.arrivals()
        lib = self.lib
        if self.endpoints:
            endpoint = min(self.endpoints, key=lambda e: (-arrival[e], e))
            worst = arrival[endpoint]
            path = self.path_to(endpoint, best)
            ties = sum(1 for e in self.endpoints if arrival[e] >= worst - 1e-12)
        else:
            endpoint, worst, path, ties = None, 0.0, [], 0
        total = worst + lib.setup_ns + lib.clock_skew_ns
        period = total if period is None else period
        return TimingReport(
            critical_path=path,
            total_ns=total,
            fmax_mhz=fmax_mhz(total),
            per_net_slack=self.slack(arrival, period),
            period_ns=period,
            endpoint=endpoint,
            signal=self.signal,
            critical_endpoints=ties,
        )


def arrival_times_ns(r: RoutedApp, lib: DelayLibrary, signal: str = "data") -> dict[str, float]:
    """Arrival time of every pin, tile output and switch-box output"""
    arrival, _ = TimingGraph(r, lib, signal).arrivals()
    return arrival


def critical_path(r: RoutedApp, lib: DelayLibrary, period: Optional[float] = None) -> TimingReport:
    """Worst register-to-register path; sparse designs also check valid and ready"""
    signals = SIGNALS if r.graph.mode == Mode.SPARSE else ("data",)
    reports = [TimingGraph(r, lib, s).report(period) for s in signals]
    worst = reports[0]
    for report in reports[1:]:
        if report.total_ns > worst.total_ns:
            worst = report
    logger.info(
        "sta: critical path %.3f ns (%.1f MHz) on %s, %d elements",
        worst.total_ns, worst.fmax_mhz, worst.signal, len(worst.critical_path),
    )
    return worst


# ---------------------------------------------------------------------------
# Cycle-level arrivals
# ---------------------------------------------------------------------------

@dataclass
class CycleArrivals:
    arrival: dict[Pin, int] = field(default_factory=dict)
    output: dict[str, int] = field(default_factory=dict)

    def at(self, node_id: str, port: str = "in0") -> int:
        return self.arrival[Pin(node_id, port)]

    def inputs_of(self, node: Node) -> dict[str, int]:
        return {p: self.arrival[Pin(node.id, p)] for p in node.data_ports if Pin(node.id, p) in self.arrival}


def cycle_arrivals(g: AppGraph, r: Optional[RoutedApp] = None) -> CycleArrivals:
    """Longest cycle count from the sources to every input pin

    Scheduled nodes and MEMs contribute nothing: their latency belongs to the
    application's own timing. Enabled switch-box registers of `r` add one
    cycle each, and hardened nets of `r` add their row-group distribution latency.
    """
    registers = r.register_counts() if r is not None else {}
    driver_of = g.driver_index()
    result = CycleArrivals()
    for node_id in topo_order(g):
        node = g.nodes[node_id]
        inputs = [result.arrival[Pin(node_id, p)] for p in node.data_ports if Pin(node_id, p) in result.arrival]
        out = (max(inputs) if inputs else 0) + node.pipeline_latency
        result.output[node_id] = out
        net = driver_of.get(node_id)
        if net is None:
            continue
        for pin in net.sinks:
            if net.hardened and r is not None:
                result.arrival[pin] = out + r.spec.hardened_latency(r.tile_of(pin.node))
            else:
                result.arrival[pin] = out + registers.get((net.id, pin), 0)
    return result


def balance_targets(g: AppGraph, arrivals: CycleArrivals) -> dict[Pin, int]:
    """Cycles each early data input must be delayed by; IO outputs share one target"""
    need: dict[Pin, int] = {}
    outputs = [n for n in g.nodes_of(NodeKind.IO_OUT) if Pin(n.id, "in0") in arrivals.arrival]
    io_target = max((arrivals.at(n.id) for n in outputs), default=0)
    for node in sorted(g.nodes.values(), key=lambda n: n.id):
        ports = [p for p in node.data_ports if p not in CONTROL_PORTS and Pin(node.id, p) in arrivals.arrival]
        if node.kind == NodeKind.IO_OUT:
            target = io_target
        elif len(ports) >= 2:
            target = max(arrivals.at(node.id, p) for p in ports)
        else:
            continue
        for port in ports:
            deficit = target - arrivals.at(node.id, port)
            if deficit > 0:
                need[Pin(node.id, port)] = deficit
    return need


def insert_register_chain(g: AppGraph, pin: Pin, count: int, prefix: str = "bal") -> list[str]:
    """Put `count` REG nodes in front of `pin`; returns the new node ids"""
    added = []
    for _ in range(count):
        net = g.input_net(pin.node, pin.port)
        reg = Node(id=g.fresh_id(prefix), kind=NodeKind.REG)
        g.splice(net.id, [pin], reg)
        added.append(reg.id)
    return added


def balance_branches(g: AppGraph) -> tuple[AppGraph, int]:
    """Delay-match every multi-input node and all IO outputs with REG nodes"""
    out = g.copy()
    if g.mode == Mode.SPARSE:
        logger.info("balance: sparse graphs are elastic, nothing to match")
        return out, 0
    need = balance_targets(out, cycle_arrivals(out))
    inserted = 0
    for pin, count in sorted(need.items()):
        inserted += len(insert_register_chain(out, pin, count))
    logger.info("balance: inserted %d registers on %d inputs", inserted, len(need))
    return out, inserted
