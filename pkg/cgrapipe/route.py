"""
Negotiated-congestion routing and the routed-application container
"""
import copy
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import networkx as nx

from cgrapipe.arch import (
    ArchSpec,
    PortNode,
    RoutingGraph,
    SbNode,
    Side,
    Tile,
    TileKind,
    build_routing_graph,
    reg_pin,
)
from cgrapipe.dfg import AppGraph, Net, NodeKind, Pin
from cgrapipe.errors import CapacityError, UnroutableError
from cgrapipe.pnr import Placement, PnrParams

logger = logging.getLogger(__name__)

Resource = tuple[Tile, Side, int, int]


class Segment(NamedTuple):
    """One switch-box traversal; `entry` is None where the route leaves a tile pin"""
    tile: Tile
    entry: Optional[Side]
    exit: Side
    track: int
    width: int
    register_enabled: bool = False

    @property
    def resource(self) -> Resource:
        return (self.tile, self.exit, self.track, self.width)

    @property
    def is_hop(self) -> bool:
        return self.entry is not None

    def label(self) -> str:
        entry = self.entry.value if self.entry is not None else "C"
        return f"{self.tile[0]},{self.tile[1]}:{entry}->{self.exit.value}:t{self.track}:w{self.width}"


class Tap(NamedTuple):
    """Connection-box select feeding one sink pin; side None is an in-tile connection"""
    node: str
    port: str
    side: Optional[Side]
    track: Optional[int]

    @property
    def pin(self) -> Pin:
        return Pin(self.node, self.port)


@dataclass
class RoutedApp:
    spec: ArchSpec
    graph: AppGraph
    placement: Placement
    routes: dict[str, list[Segment]] = field(default_factory=dict)
    taps: dict[str, list[Tap]] = field(default_factory=dict)
    # register slot index of REG/FIFO nodes
    slots: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "RoutedApp":
        return RoutedApp(
            spec=self.spec,
            graph=self.graph.copy(),
            placement=copy.deepcopy(self.placement),
            routes={k: list(v) for k, v in self.routes.items()},
            taps={k: list(v) for k, v in self.taps.items()},
            slots=dict(self.slots),
        )

    def tile_of(self, node_id: str) -> Tile:
        return self.placement.tile_of(node_id)

    def segment_paths(self, net_id: str) -> dict[Pin, list[Segment]]:
        """Segments from the driver to each sink, in traversal order"""
        segments = self.routes.get(net_id, [])
        by_resource = {s.resource: s for s in segments}
        paths = {}
        for tap in self.taps.get(net_id, []):
            path = []
            if tap.side is not None:
                tile = self.tile_of(tap.node)
                prev = self.spec.neighbor(tile, tap.side)
                seg = by_resource[(prev, tap.side.opposite, tap.track, self.graph.nets[net_id].width)]
                while True:
                    path.append(seg)
                    if seg.entry is None:
                        break
                    prev = self.spec.neighbor(seg.tile, seg.entry)
                    seg = by_resource[(prev, seg.entry.opposite, seg.track, seg.width)]
            path.reverse()
            paths[tap.pin] = path
        return paths

    def register_counts(self) -> dict[tuple[str, Pin], int]:
        """Enabled switch-box registers between each net's driver and each sink"""
        counts = {}
        for net_id in self.routes:
            for pin, path in self.segment_paths(net_id).items():
                counts[(net_id, pin)] = sum(1 for s in path if s.register_enabled)
        return counts

    def set_register(self, net_id: str, resource: Resource, enabled: bool = True) -> None:
        self.routes[net_id] = [
            s._replace(register_enabled=enabled) if s.resource == resource else s
            for s in self.routes[net_id]
        ]

    def enabled_registers(self) -> int:
        return sum(1 for segs in self.routes.values() for s in segs if s.register_enabled)

    def used_resources(self) -> dict[Resource, list[str]]:
        used = defaultdict(list)
        for net_id, segments in self.routes.items():
            for seg in segments:
                used[seg.resource].append(net_id)
        return used

    def check_legal(self, rg: Optional[RoutingGraph] = None) -> list[str]:
        """Route legality: disjoint resources, real register sites, connected trees"""
        problems = []
        for resource, nets in sorted(self.used_resources().items(), key=lambda kv: str(kv[0])):
            if len(nets) > 1:
                problems.append(f"resource {resource} shared by {sorted(nets)}")
        for net_id, net in sorted(self.graph.nets.items()):
            segments = self.routes.get(net_id, [])
            if net.hardened:
                if segments:
                    problems.append(f"hardened net {net_id} has {len(segments)} segments")
                continue
            if rg is not None:
                for seg in segments:
                    node = SbNode(seg.tile[0], seg.tile[1], seg.exit, seg.track, seg.width, "out")
                    if node not in rg.graph:
                        problems.append(f"net {net_id} uses missing resource {seg.label()}")
                    elif seg.register_enabled and not rg.register_site(node):
                        problems.append(f"net {net_id} enables a register without a site at {seg.label()}")
            tapped = {t.pin for t in self.taps.get(net_id, [])}
            if tapped != set(net.sinks):
                problems.append(f"net {net_id} taps {sorted(map(str, tapped))} but sinks are {sorted(map(str, net.sinks))}")
                continue
            try:
                paths = self.segment_paths(net_id)
            except KeyError:
                problems.append(f"net {net_id} route is not a connected tree")
                continue
            driver_tile = self.tile_of(net.driver.node)
            for pin, path in paths.items():
                root = path[0].tile if path else driver_tile
                if root != driver_tile:
                    problems.append(f"net {net_id} path to {pin} does not start at the driver tile")
            reached = {s for path in paths.values() for s in path}
            if set(segments) - reached:
                problems.append(f"net {net_id} has dangling segments")
        return problems


# ---------------------------------------------------------------------------
# Register-like node mapping
# ---------------------------------------------------------------------------

def _node_width(g: AppGraph, node_id: str, sink_of: dict[Pin, Net]) -> int:
    net = sink_of.get(Pin(node_id, "in0"))
    return net.width if net is not None else 16


def map_floating_nodes(
    g: AppGraph,
    placement: Placement,
    spec: ArchSpec,
    fixed_loc: Optional[dict[str, Tile]] = None,
    fixed_slots: Optional[dict[str, int]] = None,
) -> tuple[dict[str, Tile], dict[str, int]]:
    """Position REG/FIFO nodes in register slots and SHIFT nodes in PE register files

    A floating node is put on the line between its nearest placed upstream node
    and the centroid of its nearest placed downstream nodes, interpolated by
    how deep it sits in the chain, then moved to the closest free tile.
    """
    loc = dict(placement.loc)
    loc.update(fixed_loc or {})
    slots = dict(fixed_slots or {})
    driver_of = g.driver_index()
    sink_of = g.sink_index()

    slot_use: dict[tuple[Tile, int], set[int]] = defaultdict(set)
    rf_use: set[Tile] = set()
    for node_id, tile in loc.items():
        node = g.nodes.get(node_id)
        if node is None or not node.is_floating:
            continue
        if node.kind == NodeKind.SHIFT:
            rf_use.add(tile)
        elif node_id in slots:
            slot_use[(tile, _node_width(g, node_id, sink_of))].add(slots[node_id])

    def anchor_up(node_id: str) -> tuple[Tile, int]:
        depth, current = 1, node_id
        while True:
            net = sink_of[Pin(current, "in0")]
            upstream = net.driver.node
            if upstream in placement.loc or upstream in (fixed_loc or {}):
                return loc[upstream], depth
            current, depth = upstream, depth + 1

    def anchor_down(node_id: str) -> tuple[list[Tile], int]:
        found, best, frontier, seen = [], None, [(node_id, 0)], {node_id}
        while frontier:
            current, depth = frontier.pop(0)
            net = driver_of.get(current)
            if net is None:
                continue
            for sink in net.sinks:
                if sink.node in seen:
                    continue
                seen.add(sink.node)
                if sink.node in placement.loc or sink.node in (fixed_loc or {}):
                    found.append(loc[sink.node])
                    best = depth + 1 if best is None else min(best, depth + 1)
                else:
                    frontier.append((sink.node, depth + 1))
        return found, best or 1

    pending = sorted(n.id for n in g.nodes.values() if n.is_floating and n.id not in loc)
    for node_id in pending:
        node = g.nodes[node_id]
        up_tile, up_depth = anchor_up(node_id)
        down_tiles, down_depth = anchor_down(node_id)
        if down_tiles:
            dr = sum(t[0] for t in down_tiles) / len(down_tiles)
            dc = sum(t[1] for t in down_tiles) / len(down_tiles)
        else:
            dr, dc = up_tile
        frac = up_depth / (up_depth + down_depth)
        target = (up_tile[0] + (dr - up_tile[0]) * frac, up_tile[1] + (dc - up_tile[1]) * frac)
        width = _node_width(g, node_id, sink_of)

        def free(tile: Tile) -> bool:
            if node.kind == NodeKind.SHIFT:
                return spec.kind(tile) == TileKind.PE and tile not in rf_use
            return len(slot_use[(tile, width)]) < spec.tracks(width)

        candidates = sorted(
            (t for t in spec.tiles() if free(t)),
            key=lambda t: (abs(t[0] - target[0]) + abs(t[1] - target[1]), t),
        )
        if not candidates:
            raise CapacityError({"register file" if node.kind == NodeKind.SHIFT else "register slot": 1})
        tile = candidates[0]
        loc[node_id] = tile
        if node.kind == NodeKind.SHIFT:
            rf_use.add(tile)
        else:
            slot = min(set(range(spec.tracks(width))) - slot_use[(tile, width)])
            slot_use[(tile, width)].add(slot)
            slots[node_id] = slot
    return loc, slots


# ---------------------------------------------------------------------------
# PathFinder
# ---------------------------------------------------------------------------

def source_pin(node_kind: NodeKind, node_id: str, slots: dict[str, int]) -> str:
    if node_kind in (NodeKind.REG, NodeKind.FIFO):
        return reg_pin(slots[node_id], "out")
    if node_kind == NodeKind.SHIFT:
        return "rf.out"
    return "core.out"


def sink_pin(node_kind: NodeKind, node_id: str, port: str, slots: dict[str, int]) -> str:
    if node_kind in (NodeKind.REG, NodeKind.FIFO):
        return reg_pin(slots[node_id], "in")
    if node_kind == NodeKind.SHIFT:
        return "rf.in"
    return f"core.{port}"


class _PathFinder:
    """Rip-up and reroute with history costs on switch-box outputs"""

    margin = 2

    def __init__(self, rg: RoutingGraph, r: RoutedApp, params: PnrParams):
        self.rg = rg
        self.r = r
        self.params = params
        self.hist: dict[SbNode, float] = defaultdict(lambda: 1.0)
        self.occ: dict[SbNode, set[str]] = defaultdict(set)

    def _sb_out(self, seg: Segment) -> SbNode:
        return SbNode(seg.tile[0], seg.tile[1], seg.exit, seg.track, seg.width, "out")

    def occupy(self, net_id: str, segments: list[Segment]) -> None:
        for seg in segments:
            self.occ[self._sb_out(seg)].add(net_id)

    def release(self, net_id: str, segments: list[Segment]) -> None:
        for seg in segments:
            self.occ[self._sb_out(seg)].discard(net_id)

    def terminals(self, net: Net) -> tuple[PortNode, list[tuple[Pin, PortNode]]]:
        g, loc, slots = self.r.graph, self.r.placement.loc, self.r.slots
        driver = g.nodes[net.driver.node]
        dt = loc[driver.id]
        src = PortNode(dt[0], dt[1], source_pin(driver.kind, driver.id, slots), net.width, "out")
        sinks = []
        for pin in net.sinks:
            node = g.nodes[pin.node]
            t = loc[pin.node]
            sinks.append((pin, PortNode(t[0], t[1], sink_pin(node.kind, node.id, pin.port, slots), net.width, "in")))
        sinks.sort(key=lambda item: (abs(item[1].row - dt[0]) + abs(item[1].col - dt[1]), item[0]))
        return src, sinks

    def _weight(self, net_id: str, target: PortNode, box: Optional[tuple[int, int, int, int]]):
        hist, occ = self.hist, self.occ

        def weight(u, v, data):
            if box is not None and not (box[0] <= v[0] <= box[1] and box[2] <= v[1] <= box[3]):
                return None
            if isinstance(v, PortNode):
                return 0.0 if v == target else None
            if v.io == "in":
                return 0.0
            others = len(occ[v]) - (1 if net_id in occ[v] else 0)
            return hist[v] * (1.0 + others)

        return weight

    def route_net(self, net: Net) -> tuple[list[Segment], list[Tap]]:
        src, sinks = self.terminals(net)
        rows = [src.row] + [p.row for _, p in sinks]
        cols = [src.col] + [p.col for _, p in sinks]
        box = (min(rows) - self.margin, max(rows) + self.margin, min(cols) - self.margin, max(cols) + self.margin)

        tree = [src]
        in_tree = {src}
        parent: dict[SbNode, object] = {}
        taps = []
        for pin, target in sinks:
            path = None
            for bounds in (box, None):
                try:
                    _, path = nx.multi_source_dijkstra(
                        self.rg.graph, tree, target=target, weight=self._weight(net.id, target, bounds)
                    )
                    break
                except nx.NetworkXNoPath:
                    continue
            if path is None:
                raise UnroutableError([net.id], reason=f"no path to {pin}")
            for a, b in zip(path, path[1:]):
                if b == target:
                    break
                if isinstance(b, SbNode) and b.io == "out" and b not in parent:
                    parent[b] = a
                if b not in in_tree:
                    in_tree.add(b)
                    tree.append(b)
            before = path[-2]
            if isinstance(before, SbNode):
                taps.append(Tap(pin.node, pin.port, before.side, before.track))
            else:
                taps.append(Tap(pin.node, pin.port, None, None))

        segments = []
        for node, pred in parent.items():
            entry = pred.side if isinstance(pred, SbNode) else None
            segments.append(Segment((node.row, node.col), entry, node.side, node.track, node.width, False))
        return segments, taps

    def run(self, net_ids: list[str]) -> None:
        g = self.r.graph
        order = sorted(net_ids, key=lambda n: (-len(g.nets[n].sinks), n))
        for iteration in range(1, self.params.route_iter_limit + 1):
            for net_id in order:
                self.release(net_id, self.r.routes.get(net_id, []))
                segments, taps = self.route_net(g.nets[net_id])
                self.r.routes[net_id] = segments
                self.r.taps[net_id] = taps
                self.occupy(net_id, segments)
            overused = [node for node, nets in self.occ.items() if len(nets) > 1]
            logger.info("route iteration %d: %d overused resources", iteration, len(overused))
            if not overused:
                return
            for node in overused:
                self.hist[node] *= self.params.congestion_growth
        offenders = sorted({n for node, nets in self.occ.items() if len(nets) > 1 for n in nets})
        raise UnroutableError(offenders)


def route(
    g: AppGraph,
    placement: Placement,
    spec: ArchSpec,
    params: Optional[PnrParams] = None,
    rg: Optional[RoutingGraph] = None,
) -> RoutedApp:
    """Map register-like nodes, then route every non-hardened net"""
    params = params or PnrParams()
    rg = rg or build_routing_graph(spec)
    loc, slots = map_floating_nodes(g, placement, spec)
    full = Placement(loc=loc, cost=placement.cost, initial_cost=placement.initial_cost)
    r = RoutedApp(spec=spec, graph=g, placement=full, slots=slots)
    for net in g.nets.values():
        if net.hardened:
            r.routes[net.id] = []
            r.taps[net.id] = []
    pathfinder = _PathFinder(rg, r, params)
    pathfinder.run([n.id for n in g.nets.values() if not n.hardened])
    logger.info(
        "routed %d nets with %d segments",
        len(g.nets), sum(len(s) for s in r.routes.values()),
    )
    return r


def reroute(
    r: RoutedApp,
    net_ids: list[str],
    params: Optional[PnrParams] = None,
    rg: Optional[RoutingGraph] = None,
) -> RoutedApp:
    """Route only `net_ids` against the fixed occupancy of every other net

    New floating nodes in `r.graph` are mapped first; existing ones keep their tiles.
    """
    params = params or PnrParams()
    rg = rg or build_routing_graph(r.spec)
    core = Placement(
        loc={n: t for n, t in r.placement.loc.items() if n in r.graph.nodes and not r.graph.nodes[n].is_floating},
        cost=r.placement.cost,
        initial_cost=r.placement.initial_cost,
    )
    floating = {n: t for n, t in r.placement.loc.items() if n in r.graph.nodes and r.graph.nodes[n].is_floating}
    loc, slots = map_floating_nodes(r.graph, core, r.spec, fixed_loc=floating, fixed_slots=r.slots)
    r.placement = Placement(loc=loc, cost=core.cost, initial_cost=core.initial_cost)
    r.slots = slots

    pathfinder = _PathFinder(rg, r, params)
    targets = [n for n in net_ids if not r.graph.nets[n].hardened]
    for net_id, segments in r.routes.items():
        if net_id not in targets:
            pathfinder.occupy(net_id, segments)
    for net_id in targets:
        r.routes.setdefault(net_id, [])
    pathfinder.run(targets)
    return r


# ---------------------------------------------------------------------------
# PnR result file
# ---------------------------------------------------------------------------

def _tile_key(tile: Tile) -> str:
    return f"{tile[0]},{tile[1]}"


def _parse_tile(key: str) -> Tile:
    r, c = key.split(",")
    return int(r), int(c)


def dump_pnr(r: RoutedApp) -> str:
    data = {
        "placement": {n: _tile_key(t) for n, t in sorted(r.placement.loc.items())},
        "slots": dict(sorted(r.slots.items())),
        "routes": {
            net_id: [
                [_tile_key(s.tile), s.entry.value if s.entry else None, s.exit.value, s.track, s.width, s.register_enabled]
                for s in sorted(segs, key=lambda s: s.label())
            ]
            for net_id, segs in sorted(r.routes.items())
        },
        "taps": {
            net_id: [[t.node, t.port, t.side.value if t.side else None, t.track] for t in sorted(taps, key=str)]
            for net_id, taps in sorted(r.taps.items())
        },
    }
    return json.dumps(data, indent=2)


def load_pnr(text: str, g: AppGraph, spec: ArchSpec) -> RoutedApp:
    data = json.loads(text)
    placement = Placement(loc={n: _parse_tile(t) for n, t in data["placement"].items()})
    routes = {
        net_id: [
            Segment(_parse_tile(t), Side(entry) if entry else None, Side(exit_side), track, width, bool(reg))
            for t, entry, exit_side, track, width, reg in segs
        ]
        for net_id, segs in data["routes"].items()
    }
    taps = {
        net_id: [Tap(node, port, Side(side) if side else None, track) for node, port, side, track in items]
        for net_id, items in data.get("taps", {}).items()
    }
    return RoutedApp(spec=spec, graph=g, placement=placement, routes=routes, taps=taps, slots=dict(data.get("slots", {})))
