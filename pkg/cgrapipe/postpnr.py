"""
Post place-and-route pipelining and memory schedule maintenance
"""
import logging
from typing import Optional

from cgrapipe.arch import DelayLibrary, RoutingGraph, build_routing_graph
from cgrapipe.dfg import AppGraph, Mode, Node, NodeKind, Pin, topo_order
from cgrapipe.errors import CapacityError, ScheduleError, UnroutableError
from cgrapipe.pnr import PnrParams
from cgrapipe.route import RoutedApp, Segment, Tap, reroute
from cgrapipe.sta import (
    TimingReport,
    balance_targets,
    critical_path,
    cycle_arrivals,
    insert_register_chain,
)

logger = logging.getLogger(__name__)

MIN_IMPROVEMENT_NS = 0.01
BALANCE_ROUNDS = 8


def _improved(before: TimingReport, after: TimingReport) -> bool:
    if after.total_ns <= before.total_ns - MIN_IMPROVEMENT_NS:
        return True
    # equal worst delay but fewer endpoints sitting on it still makes progress
    return after.total_ns <= before.total_ns + 1e-9 and after.critical_endpoints < before.critical_endpoints


def midpoint_candidates(r: RoutedApp, report: TimingReport) -> list[tuple[str, Segment]]:
    """Registerable pass-through hops of the critical path, nearest the delay midpoint first"""
    if not r.spec.sb_register_sites:
        return []
    total = sum(e.delay for e in report.critical_path)
    cumulative = 0.0
    scored = []
    for index, element in enumerate(report.critical_path):
        cumulative += element.delay
        seg = element.segment
        if element.kind != "hop" or seg is None or not seg.is_hop or seg.register_enabled:
            continue
        scored.append((abs(cumulative - total / 2), index, element.net, seg))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [(net, seg) for _, _, net, seg in scored]


def _exclusive_segments(r: RoutedApp, net_id: str, pin: Pin) -> list[Segment]:
    paths = r.segment_paths(net_id)
    shared = {s for other, path in paths.items() if other != pin for s in path}
    return [s for s in paths.get(pin, []) if s not in shared and not s.register_enabled]


def balance_routed(
    r: RoutedApp,
    params: Optional[PnrParams] = None,
    rg: Optional[RoutingGraph] = None,
) -> tuple[RoutedApp, bool]:
    """Delay-match a routed dense design in place

    Early inputs first take switch-box registers on route branches no other
    sink shares; whatever is still missing becomes REG nodes, and only the
    affected nets are re-routed. Returns the design and whether it balanced.
    """
    rg = rg or build_routing_graph(r.spec)
    for _ in range(BALANCE_ROUNDS):
        need = balance_targets(r.graph, cycle_arrivals(r.graph, r))
        if not need:
            return r, True
        dirty: set[str] = set()
        for pin, deficit in sorted(need.items()):
            net = r.graph.input_net(pin.node, pin.port)
            free = _exclusive_segments(r, net.id, pin) if r.spec.sb_register_sites else []
            if free:
                step = len(free) / min(deficit, len(free))
                chosen = [free[int(i * step)] for i in range(min(deficit, len(free)))]
                for seg in chosen:
                    r.set_register(net.id, seg.resource)
                deficit -= len(chosen)
            if deficit > 0:
                added = insert_register_chain(r.graph, pin, deficit, prefix="preg")
                dirty.add(net.id)
                dirty.update(r.graph.output_net(reg).id for reg in added)
        if dirty:
            try:
                reroute(r, sorted(dirty), params, rg)
            except (UnroutableError, CapacityError) as e:
                logger.warning("balance: re-route failed: %s", e)
                return r, False
    ok = not balance_targets(r.graph, cycle_arrivals(r.graph, r))
    return r, ok


def post_pnr_pipeline(
    r: RoutedApp,
    lib: DelayLibrary,
    max_iters: int = 64,
    params: Optional[PnrParams] = None,
    rg: Optional[RoutingGraph] = None,
) -> RoutedApp:
    """Break the critical path with switch-box registers until it stops improving"""
    rg = rg or build_routing_graph(r.spec)
    current = r.copy()
    if not balance_targets(current.graph, cycle_arrivals(current.graph, current)):
        balanced = True
    else:
        current, balanced = balance_routed(current, params, rg)
    if not balanced:
        logger.warning("post-PnR: input design could not be balanced, leaving it unchanged")
        return r.copy()
    report = critical_path(current, lib)

    for iteration in range(1, max_iters + 1):
        candidates = midpoint_candidates(current, report)
        if not candidates:
            logger.info("post-PnR: no registerable hop on the critical path")
            break
        net_id, seg = candidates[0]
        trial = current.copy()
        trial.set_register(net_id, seg.resource)
        trial, balanced = balance_routed(trial, params, rg)
        if not balanced:
            logger.warning("post-PnR: balancing infeasible, keeping best design")
            break
        trial_report = critical_path(trial, lib)
        if not _improved(report, trial_report):
            logger.info("post-PnR: stopped improving at %.3f ns", report.total_ns)
            break
        logger.info(
            "post-PnR iteration %d: %s on %s, %.3f -> %.3f ns",
            iteration, seg.label(), net_id, report.total_ns, trial_report.total_ns,
        )
        current, report = trial, trial_report
    return current


def _free_slot(r: RoutedApp, tile, width: int) -> Optional[int]:
    used = {
        slot for node_id, slot in r.slots.items()
        if r.placement.loc.get(node_id) == tile and _node_width(r, node_id) == width
    }
    free = sorted(set(range(r.spec.tracks(width))) - used)
    return free[0] if free else None


def _node_width(r: RoutedApp, node_id: str) -> int:
    net = r.graph.input_net(node_id, "in0")
    return net.width if net is not None else 16


def split_net_with_fifo(r: RoutedApp, net_id: str, seg: Segment, depth: int = 2) -> Optional[str]:
    """Cut `net_id` at pass-through hop `seg` with a FIFO in that tile's register slot"""
    net = r.graph.nets[net_id]
    slot = _free_slot(r, seg.tile, net.width)
    if slot is None or seg.entry is None:
        return None

    by_resource = {s.resource: s for s in r.routes[net_id]}
    children: dict[Segment, list[Segment]] = {}
    for s in r.routes[net_id]:
        if s.entry is not None:
            parent = by_resource[(r.spec.neighbor(s.tile, s.entry), s.entry.opposite, s.track, s.width)]
            children.setdefault(parent, []).append(s)
    subtree, stack = set(), [seg]
    while stack:
        s = stack.pop()
        subtree.add(s)
        stack.extend(children.get(s, []))

    moved_taps = []
    for tap in r.taps[net_id]:
        if tap.side is None:
            continue
        feeder = by_resource[(r.spec.neighbor(r.tile_of(tap.node), tap.side), tap.side.opposite, tap.track, net.width)]
        if feeder in subtree:
            moved_taps.append(tap)
    moved = [t.pin for t in moved_taps]

    fifo = Node(id=r.graph.fresh_id("sfifo"), kind=NodeKind.FIFO, depth=depth)
    new_net = r.graph.splice(net_id, moved, fifo)
    r.placement.loc[fifo.id] = seg.tile
    r.slots[fifo.id] = slot

    head = seg._replace(entry=None, register_enabled=False)
    r.routes[new_net.id] = [head if s == seg else s for s in subtree]
    r.taps[new_net.id] = moved_taps
    r.routes[net_id] = [s for s in r.routes[net_id] if s not in subtree]
    r.taps[net_id] = [t for t in r.taps[net_id] if t not in moved_taps] + [Tap(fifo.id, "in0", seg.entry, seg.track)]
    return fifo.id


def insert_sparse_fifos(
    r: RoutedApp,
    lib: DelayLibrary,
    max_iters: int = 64,
    depth: int = 2,
) -> RoutedApp:
    """Break long data, valid and ready paths together with skid-buffer FIFOs"""
    if r.graph.mode != Mode.SPARSE:
        raise ValueError("insert_sparse_fifos needs a sparse design")
    current = r.copy()
    report = critical_path(current, lib)
    for iteration in range(1, max_iters + 1):
        accepted = False
        for net_id, seg in midpoint_candidates_any(current, report):
            trial = current.copy()
            fifo = split_net_with_fifo(trial, net_id, seg, depth)
            if fifo is None:
                continue
            trial_report = critical_path(trial, lib)
            if _improved(report, trial_report):
                logger.info(
                    "sparse FIFO %d: %s at %s, %.3f -> %.3f ns",
                    iteration, fifo, seg.label(), report.total_ns, trial_report.total_ns,
                )
                current, report, accepted = trial, trial_report, True
            break
        if not accepted:
            break
    return current


def midpoint_candidates_any(r: RoutedApp, report: TimingReport) -> list[tuple[str, Segment]]:
    """Like midpoint_candidates, but FIFOs need a free register slot rather than an SB register site"""
    total = sum(e.delay for e in report.critical_path)
    cumulative = 0.0
    scored = []
    for index, element in enumerate(report.critical_path):
        cumulative += element.delay
        seg = element.segment
        if element.kind != "hop" or seg is None or not seg.is_hop:
            continue
        if _free_slot(r, seg.tile, seg.width) is None:
            continue
        scored.append((abs(cumulative - total / 2), index, element.net, seg))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [(net, seg) for _, _, net, seg in scored]


# ---------------------------------------------------------------------------
# Memory schedules
# ---------------------------------------------------------------------------

def intended_arrivals(g: AppGraph) -> dict[str, int]:
    """Cycle each MEM sees its first input when only the application's own latencies count"""
    driver_of = g.driver_index()
    arrival: dict[Pin, int] = {}
    result = {}
    for node_id in topo_order(g):
        node = g.nodes[node_id]
        inputs = [arrival[Pin(node_id, p)] for p in node.data_ports if Pin(node_id, p) in arrival]
        start = max(inputs) if inputs else 0
        if node.kind == NodeKind.MEM:
            result[node_id] = start
        own = node.latency_cycles if (node.scheduled or node.kind == NodeKind.MEM) else 0
        net = driver_of.get(node_id)
        if net is not None:
            for pin in net.sinks:
                arrival[pin] = start + own
    return result


def derive_schedules(g: AppGraph, length: int, r: Optional[RoutedApp] = None) -> AppGraph:
    """Give every MEM `length` consecutive access offsets starting where its data arrives"""
    out = g.copy()
    intended = intended_arrivals(out)
    pipelined = cycle_arrivals(out, r)
    for mem in sorted(out.nodes_of(NodeKind.MEM), key=lambda n: n.id):
        start = intended[mem.id] + pipelined.at(mem.id)
        out.schedules[mem.id] = list(range(start, start + length))
    return out


def mem_input_arrivals(g: AppGraph, r: Optional[RoutedApp] = None) -> dict[str, int]:
    arrivals = cycle_arrivals(g, r)
    return {mem.id: arrivals.at(mem.id) for mem in g.nodes_of(NodeKind.MEM)}


def kernel_latency_deltas(
    before: AppGraph,
    after: AppGraph,
    routed: Optional[RoutedApp] = None,
) -> dict[str, int]:
    """Extra pipeline cycles each MEM input gained between two compiles of one application"""
    base = mem_input_arrivals(before)
    new = mem_input_arrivals(after, routed)
    return {mem: new[mem] - base.get(mem, 0) for mem in sorted(new)}


def update_schedule(g: AppGraph, measured_latencies: dict[str, int]) -> AppGraph:
    """Shift every MEM's offsets by its measured latency delta"""
    out = g.copy()
    for mem_id, delta in sorted(measured_latencies.items()):
        if mem_id not in out.schedules or delta == 0:
            continue
        shifted = [o + delta for o in out.schedules[mem_id]]
        if shifted and min(shifted) < 0:
            raise ScheduleError(f"schedule underflow at {mem_id}: offset {min(shifted)}")
        out.schedules[mem_id] = shifted
        logger.info("schedule: %s shifted by %+d cycles", mem_id, delta)
    return out
