"""
Tile configuration emission, decoding and low-unrolling duplication

A Config is a per-tile record of switch-box selects and register bits,
connection-box selects and core settings. Node and net names live in a
separate symbol table so that copies of one region are byte-identical.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from cgrapipe.arch import ArchSpec, Side, Tile, TileKind
from cgrapipe.dfg import AppGraph, Mode, Net, Node, NodeKind, Pin
from cgrapipe.errors import DuplicationError
from cgrapipe.pnr import Placement
from cgrapipe.route import RoutedApp, Segment, Tap

logger = logging.getLogger(__name__)


def tile_key(tile: Tile) -> str:
    return f"{tile[0]},{tile[1]}"


def parse_tile_key(key: str) -> Tile:
    r, c = key.split(",")
    return int(r), int(c)


@dataclass
class Config:
    rows: int
    cols: int
    mode: str = Mode.DENSE.value
    tiles: dict[str, dict] = field(default_factory=dict)
    symbols: dict = field(default_factory=dict)

    def tile(self, tile: Tile) -> dict:
        return self.tiles.setdefault(tile_key(tile), {})

    def tile_block(self, tile: Tile) -> str:
        """Canonical text of one tile's configuration"""
        return json.dumps(self.tiles.get(tile_key(tile), {}), sort_keys=True)

    def register_bits(self) -> int:
        return sum(1 for cfg in self.tiles.values() for sb in cfg.get("sb", {}).values() if sb["reg"])

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "mode": self.mode,
            "tiles": {k: self.tiles[k] for k in sorted(self.tiles, key=parse_tile_key)},
            "symbols": self.symbols,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        return cls(
            rows=data["rows"],
            cols=data["cols"],
            mode=data.get("mode", Mode.DENSE.value),
            tiles=dict(data.get("tiles", {})),
            symbols=dict(data.get("symbols", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))


def _source_name(node: Node, slot: Optional[int]) -> str:
    if node.kind in (NodeKind.REG, NodeKind.FIFO):
        return f"reg{slot}"
    if node.kind == NodeKind.SHIFT:
        return "rf"
    return "core"


def _sink_name(node: Node, port: str, slot: Optional[int]) -> str:
    if node.kind in (NodeKind.REG, NodeKind.FIFO):
        return f"reg{slot}.in"
    if node.kind == NodeKind.SHIFT:
        return "rf.in"
    return f"core.{port}"


def _core_record(node: Node, g: AppGraph) -> dict:
    record = {"node": node.kind.value}
    if node.kind == NodeKind.PE:
        record["op"] = node.op
        record["input_regs"] = list(node.input_regs)
        if node.const is not None:
            record["const"] = node.const
    elif node.kind == NodeKind.MEM:
        record["latency"] = node.mem_latency
        if node.id in g.schedules:
            record["schedule"] = list(g.schedules[node.id])
    if node.scheduled:
        record["scheduled"] = True
    return record


def emit_config(r: RoutedApp) -> Config:
    """Configuration for every tile of the array; untouched tiles stay in bypass"""
    g, spec = r.graph, r.spec
    c = Config(rows=spec.rows, cols=spec.cols, mode=g.mode.value)
    names: dict[str, dict[str, str]] = {}
    for tile in spec.tiles():
        c.tile(tile)["kind"] = spec.kind(tile).value

    widths = {}
    for net in g.nets.values():
        widths[net.driver.node] = net.width
    for pin, net in g.sink_index().items():
        widths.setdefault(pin.node, net.width)

    for node_id in sorted(g.nodes):
        node = g.nodes[node_id]
        tile = r.tile_of(node_id)
        cfg = c.tile(tile)
        if node.kind in (NodeKind.REG, NodeKind.FIFO):
            key = f"{widths.get(node_id, 16)}.{r.slots[node_id]}"
            record = {"node": node.kind.value}
            if node.kind == NodeKind.FIFO:
                record["depth"] = node.depth
            if node.scheduled:
                record["scheduled"] = True
            cfg.setdefault("regs", {})[key] = record
            names.setdefault(tile_key(tile), {})[f"reg{key}"] = node_id
        elif node.kind == NodeKind.SHIFT:
            cfg["rf"] = {"depth": node.depth, **({"scheduled": True} if node.scheduled else {})}
            names.setdefault(tile_key(tile), {})["rf"] = node_id
        else:
            cfg["core"] = _core_record(node, g)
            names.setdefault(tile_key(tile), {})["core"] = node_id

    for net_id in sorted(r.routes):
        net = g.nets[net_id]
        driver = g.nodes[net.driver.node]
        source = _source_name(driver, r.slots.get(driver.id))
        for seg in sorted(r.routes[net_id], key=lambda s: s.label()):
            select = f"in.{seg.entry.value}" if seg.entry is not None else source
            c.tile(seg.tile).setdefault("sb", {})[f"{seg.exit.value}.{seg.track}.{seg.width}"] = {
                "src": select, "reg": seg.register_enabled,
            }
        for tap in sorted(r.taps.get(net_id, []), key=str):
            node = g.nodes[tap.node]
            key = f"{_sink_name(node, tap.port, r.slots.get(node.id))}.{net.width}"
            value = {"side": tap.side.value, "track": tap.track} if tap.side is not None else {"local": source}
            c.tile(r.tile_of(tap.node)).setdefault("cb", {})[key] = value

    hardened = [
        {"id": n.id, "driver": list(n.driver), "sinks": [list(s) for s in sorted(n.sinks)]}
        for n in sorted(g.nets.values(), key=lambda n: n.id) if n.hardened
    ]
    c.symbols = {
        "nodes": {k: names[k] for k in sorted(names, key=parse_tile_key)},
        "nets": {n.driver.node: n.id for n in sorted(g.nets.values(), key=lambda n: n.id) if not n.hardened},
        "hardened": hardened,
    }
    logger.info("config: %d tiles, %d register bits", len(c.tiles), c.register_bits())
    return c


def _node_from_record(node_id: str, record: dict) -> Node:
    kind = NodeKind(record["node"])
    node = Node(id=node_id, kind=kind, scheduled=bool(record.get("scheduled", False)))
    if kind == NodeKind.PE:
        node.op = record["op"]
        node.const = record.get("const")
        node.input_regs = list(record.get("input_regs", []))
    elif kind == NodeKind.MEM:
        node.mem_latency = record.get("latency", 1)
    elif kind == NodeKind.FIFO:
        node.depth = record.get("depth", 2)
    return node


def decode_config(c: Config, spec: ArchSpec) -> RoutedApp:
    """Rebuild graph, placement and routes by tracing switch-box selects from every source"""
    g = AppGraph(mode=Mode(c.mode))
    loc: dict[str, Tile] = {}
    slots: dict[str, int] = {}
    names = c.symbols.get("nodes", {})
    source_node: dict[tuple[Tile, str, int], str] = {}
    sink_node: dict[tuple[Tile, str, int], Pin] = {}

    for key in sorted(c.tiles, key=parse_tile_key):
        tile, cfg = parse_tile_key(key), c.tiles[key]
        tile_names = names.get(key, {})
        if "core" in cfg:
            node = g.add_node(_node_from_record(tile_names["core"], cfg["core"]))
            loc[node.id] = tile
            if "schedule" in cfg["core"]:
                g.schedules[node.id] = list(cfg["core"]["schedule"])
            for width in (16, 1):
                source_node[(tile, "core", width)] = node.id
                for port in ("in0", "in1", "in2", "flush"):
                    sink_node[(tile, f"core.{port}", width)] = Pin(node.id, port)
        for reg_key, record in cfg.get("regs", {}).items():
            width, slot = (int(x) for x in reg_key.split("."))
            node = g.add_node(_node_from_record(tile_names[f"reg{reg_key}"], record))
            loc[node.id], slots[node.id] = tile, slot
            source_node[(tile, f"reg{slot}", width)] = node.id
            sink_node[(tile, f"reg{slot}.in", width)] = Pin(node.id, "in0")
        if "rf" in cfg:
            node = g.add_node(Node(
                id=tile_names["rf"], kind=NodeKind.SHIFT, depth=cfg["rf"]["depth"],
                scheduled=bool(cfg["rf"].get("scheduled", False)),
            ))
            loc[node.id] = tile
            for width in (16, 1):
                source_node[(tile, "rf", width)] = node.id
                sink_node[(tile, "rf.in", width)] = Pin(node.id, "in0")

    net_names = c.symbols.get("nets", {})
    routes: dict[str, list[Segment]] = {}
    taps: dict[str, list[Tap]] = {}

    def sb_entries(tile: Tile):
        for key, value in c.tiles.get(tile_key(tile), {}).get("sb", {}).items():
            side, track, width = key.split(".")
            yield Side(side), int(track), int(width), value

    def cb_entries(tile: Tile):
        for key, value in c.tiles.get(tile_key(tile), {}).get("cb", {}).items():
            pin, width = key.rsplit(".", 1)
            yield pin, int(width), value

    for (tile, source, width), driver_id in sorted(source_node.items(), key=lambda kv: (kv[0][0], kv[0][1], -kv[0][2])):
        segments, found = [], []
        stack = [
            Segment(tile, None, side, track, w, value["reg"])
            for side, track, w, value in sb_entries(tile) if value["src"] == source and w == width
        ]
        for pin, w, value in cb_entries(tile):
            if w == width and value.get("local") == source:
                found.append(Tap(sink_node[(tile, pin, w)].node, sink_node[(tile, pin, w)].port, None, None))
        while stack:
            seg = stack.pop()
            segments.append(seg)
            nxt = spec.neighbor(seg.tile, seg.exit)
            if nxt is None:
                continue
            entry = seg.exit.opposite
            for side, track, w, value in sb_entries(nxt):
                if value["src"] == f"in.{entry.value}" and track == seg.track and w == seg.width:
                    stack.append(Segment(nxt, entry, side, track, w, value["reg"]))
            for pin, w, value in cb_entries(nxt):
                if w == seg.width and value.get("side") == entry.value and value.get("track") == seg.track:
                    target = sink_node[(nxt, pin, w)]
                    found.append(Tap(target.node, target.port, entry, seg.track))
        if not found:
            continue
        net_id = net_names.get(driver_id, f"{driver_id}_net")
        g.add_net(Net(
            id=net_id,
            driver=Pin(driver_id, "out"),
            sinks=sorted(t.pin for t in found),
            width=width,
        ))
        routes[net_id] = segments
        taps[net_id] = found

    for record in c.symbols.get("hardened", []):
        g.add_net(Net(
            id=record["id"], driver=Pin(*record["driver"]), sinks=[Pin(*s) for s in record["sinks"]],
            width=1, hardened=True,
        ))
        routes[record["id"]], taps[record["id"]] = [], []

    return RoutedApp(spec=spec, graph=g, placement=Placement(loc=loc), routes=routes, taps=taps, slots=slots)


def routed_differences(a: RoutedApp, b: RoutedApp) -> list[str]:
    """Structural differences between two routed designs; empty means equivalent"""
    diffs = []
    if a.graph.mode != b.graph.mode:
        diffs.append("mode differs")
    if set(a.graph.nodes) != set(b.graph.nodes):
        diffs.append(f"node sets differ: {sorted(set(a.graph.nodes) ^ set(b.graph.nodes))}")
        return diffs
    for node_id in sorted(a.graph.nodes):
        if a.graph.nodes[node_id] != b.graph.nodes[node_id]:
            diffs.append(f"node {node_id} differs")
        if a.placement.loc.get(node_id) != b.placement.loc.get(node_id):
            diffs.append(f"node {node_id} placed differently")
    if a.slots != b.slots:
        diffs.append("register slots differ")
    if set(a.graph.nets) != set(b.graph.nets):
        diffs.append(f"net sets differ: {sorted(set(a.graph.nets) ^ set(b.graph.nets))}")
        return diffs
    for net_id in sorted(a.graph.nets):
        na, nb = a.graph.nets[net_id], b.graph.nets[net_id]
        if (na.driver, sorted(na.sinks), na.width, na.hardened) != (nb.driver, sorted(nb.sinks), nb.width, nb.hardened):
            diffs.append(f"net {net_id} differs")
        if set(a.routes.get(net_id, [])) != set(b.routes.get(net_id, [])):
            diffs.append(f"route of {net_id} differs")
        if set(a.taps.get(net_id, [])) != set(b.taps.get(net_id, [])):
            diffs.append(f"taps of {net_id} differ")
    if a.graph.schedules != b.graph.schedules:
        diffs.append("schedules differ")
    return diffs


# ---------------------------------------------------------------------------
# Duplication
# ---------------------------------------------------------------------------

def _used_tiles(c: Config) -> list[Tile]:
    return [parse_tile_key(k) for k, cfg in c.tiles.items() if set(cfg) - {"kind"}]


def _matching_offsets(
    spec: ArchSpec, rows: int, cols: int, kinds: dict[Tile, TileKind]
) -> tuple[list[tuple[int, int]], bool]:
    """Row-major region offsets whose tiles repeat `kinds`; flags a shortage of IO tiles"""
    offsets, io_short = [], False
    for dr in range(0, spec.rows - rows + 1, rows):
        for dc in range(0, spec.cols - cols + 1, cols):
            mismatched = [t for t, k in kinds.items() if spec.tile_kind.get((t[0] + dr, t[1] + dc)) != k]
            if not mismatched:
                offsets.append((dr, dc))
            elif any(kinds[t] == TileKind.IO for t in mismatched):
                io_short = True
    return offsets, io_short


def duplication_region(spec: ArchSpec, factor: int) -> tuple[int, int]:
    """Largest top-left region, split by columns first, that repeats `factor` times"""
    if factor < 1:
        raise DuplicationError("duplication factor must be ≥ 1")
    for rows, cols in ((spec.rows, spec.cols // factor), (spec.rows // factor, spec.cols)):
        if rows < 1 or cols < 1:
            continue
        kinds = {t: k for t, k in spec.tile_kind.items() if t[0] < rows and t[1] < cols}
        offsets, _ = _matching_offsets(spec, rows, cols, kinds)
        if len(offsets) >= factor:
            return rows, cols
    raise DuplicationError(f"no region of the {spec.rows}x{spec.cols} array repeats {factor} times")


def duplicate_config(c: Config, base_region: tuple[int, int], factor: int, spec: ArchSpec) -> Config:
    """Replicate the base region's configuration `factor` times across `spec`

    Copies go to the first non-overlapping region offsets, in row-major
    order, whose tile kinds match the base region. Copy k renames every node
    and net with a `_d{k}` suffix; copy 0 keeps the original names.
    """
    rows, cols = base_region
    if factor < 1:
        raise DuplicationError("duplication factor must be ≥ 1")
    used = _used_tiles(c)
    outside = [t for t in used if not (0 <= t[0] < rows and 0 <= t[1] < cols)]
    if outside:
        raise DuplicationError(f"base config uses tiles outside the {rows}x{cols} region: {outside[:4]}")
    for t in used:
        for key in c.tiles[tile_key(t)].get("sb", {}):
            nxt = spec.neighbor(t, Side(key.split(".")[0]))
            if nxt is None or not (0 <= nxt[0] < rows and 0 <= nxt[1] < cols):
                raise DuplicationError(f"route leaves the base region at {tile_key(t)}")

    base_kind = {t: TileKind(c.tiles[tile_key(t)]["kind"]) for t in used}
    offsets, io_short = _matching_offsets(spec, rows, cols, base_kind)
    if len(offsets) < factor:
        reason = "IO tiles exhausted" if io_short else "array too small"
        raise DuplicationError(f"only {len(offsets)} of {factor} copies fit ({reason})")

    out = Config(rows=spec.rows, cols=spec.cols, mode=c.mode)
    for tile in spec.tiles():
        out.tile(tile)["kind"] = spec.kind(tile).value
    nodes, nets, hardened = {}, {}, []
    for k, (dr, dc) in enumerate(offsets[:factor]):
        suffix = "" if k == 0 else f"_d{k}"
        for t in used:
            target = (t[0] + dr, t[1] + dc)
            out.tiles[tile_key(target)] = json.loads(json.dumps(c.tiles[tile_key(t)]))
            src_names = c.symbols.get("nodes", {}).get(tile_key(t))
            if src_names:
                nodes[tile_key(target)] = {slot: name + suffix for slot, name in src_names.items()}
        for driver, net_id in c.symbols.get("nets", {}).items():
            nets[driver + suffix] = net_id + suffix
        for record in c.symbols.get("hardened", []):
            hardened.append({
                "id": record["id"] + suffix,
                "driver": [record["driver"][0] + suffix, record["driver"][1]],
                "sinks": [[s[0] + suffix, s[1]] for s in record["sinks"]],
            })
    out.symbols = {
        "nodes": nodes,
        "nets": nets,
        "hardened": hardened,
        "regions": [list(o) for o in offsets[:factor]],
    }
    logger.info("duplicated %dx%d region %d times at %s", rows, cols, factor, offsets[:factor])
    return out

