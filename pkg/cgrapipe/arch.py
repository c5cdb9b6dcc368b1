"""
CGRA architecture description, routing-resource graph and delay library

The routing graph follows a disjoint switch-box topology: track k entering
a tile on one side may leave on any of the other three sides on the same
track k. Every switch-box output can carry a pipelining register.
"""
import json
import logging
from enum import Enum
from typing import NamedTuple, Optional

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field

from cgrapipe.errors import ArchError, DelayLibraryError

logger = logging.getLogger(__name__)

Tile = tuple[int, int]
WIDTHS = (16, 1)


class TileKind(str, Enum):
    """Tile core types"""
    PE = "PE"
    MEM = "MEM"
    IO = "IO"


class Side(str, Enum):
    """Switch-box sides"""
    N = "N"
    S = "S"
    E = "E"
    W = "W"

    @property
    def opposite(self) -> "Side":
        return _OPPOSITE[self]

    @property
    def delta(self) -> Tile:
        return _DELTA[self]


_OPPOSITE = {Side.N: Side.S, Side.S: Side.N, Side.E: Side.W, Side.W: Side.E}
_DELTA = {Side.N: (-1, 0), Side.S: (1, 0), Side.E: (0, 1), Side.W: (0, -1)}
SIDES = (Side.N, Side.S, Side.E, Side.W)

_KIND_LETTERS = {"P": TileKind.PE, "M": TileKind.MEM, "I": TileKind.IO}


class ArchSpec(BaseModel):
    """Grid of tiles plus interconnect parameters"""

    model_config = ConfigDict(frozen=True)

    rows: int
    cols: int
    tile_kind: dict[Tile, TileKind]
    tracks16: int = 5
    tracks1: int = 5
    sb_register_sites: bool = True
    pe_input_registers: int = 1
    regfile_depth: int = 32
    hardened_nets: frozenset[str] = frozenset()
    hardened_row_group: int = 4
    io_rows: tuple[int, ...] = (0,)

    @classmethod
    def from_rows(cls, layout: list[str], **kwargs) -> "ArchSpec":
        """Build a spec from one string per row using the letters P, M and I"""
        tile_kind = {}
        for r, line in enumerate(layout):
            for c, letter in enumerate(line):
                if letter in _KIND_LETTERS:
                    tile_kind[(r, c)] = _KIND_LETTERS[letter]
        cols = max((len(line) for line in layout), default=0)
        return cls(rows=len(layout), cols=cols, tile_kind=tile_kind, **kwargs)

    @classmethod
    def standard(
        cls,
        rows: int,
        cols: int,
        mem_every: int = 4,
        io_rows: tuple[int, ...] = (0,),
        **kwargs,
    ) -> "ArchSpec":
        """IO rows on top, MEM every `mem_every`-th column, PE elsewhere"""
        layout = []
        for r in range(rows):
            if r in io_rows:
                layout.append("I" * cols)
            else:
                layout.append("".join(
                    "M" if mem_every and (c + 1) % mem_every == 0 else "P" for c in range(cols)
                ))
        return cls.from_rows(layout, io_rows=tuple(io_rows), **kwargs)

    def kind(self, tile: Tile) -> TileKind:
        return self.tile_kind[tile]

    def in_range(self, tile: Tile) -> bool:
        return 0 <= tile[0] < self.rows and 0 <= tile[1] < self.cols

    def neighbor(self, tile: Tile, side: Side) -> Optional[Tile]:
        dr, dc = side.delta
        other = (tile[0] + dr, tile[1] + dc)
        return other if self.in_range(other) else None

    def tracks(self, width: int) -> int:
        return self.tracks16 if width == 16 else self.tracks1

    def hardened_latency(self, tile: Tile) -> int:
        """Cycles a hardened net needs to reach `tile`, one per registered row group down the column"""
        return tile[0] // self.hardened_row_group + 1

    def tiles(self) -> list[Tile]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def tiles_of(self, kind: TileKind) -> list[Tile]:
        return [t for t in self.tiles() if self.tile_kind.get(t) == kind]

    def kinds_present(self) -> list[TileKind]:
        present = set(self.tile_kind.values())
        return [k for k in TileKind if k in present]

    def widths(self) -> list[int]:
        return [w for w in WIDTHS if self.tracks(w) > 0]

    def region(self, rows: int, cols: int) -> "ArchSpec":
        """The top-left `rows` x `cols` corner as an array of its own"""
        if not (1 <= rows <= self.rows and 1 <= cols <= self.cols):
            raise ArchError([f"region {rows}x{cols} does not fit the {self.rows}x{self.cols} array"])
        return self.model_copy(update={
            "rows": rows,
            "cols": cols,
            "tile_kind": {t: k for t, k in self.tile_kind.items() if t[0] < rows and t[1] < cols},
            "io_rows": tuple(r for r in self.io_rows if r < rows),
        })

    def to_dict(self) -> dict:
        letters = {v: k for k, v in _KIND_LETTERS.items()}
        return {
            "rows": self.rows,
            "cols": self.cols,
            "tiles": [
                "".join(letters[self.tile_kind[(r, c)]] for c in range(self.cols))
                for r in range(self.rows)
            ],
            "tracks16": self.tracks16,
            "tracks1": self.tracks1,
            "sb_register_sites": self.sb_register_sites,
            "pe_input_registers": self.pe_input_registers,
            "regfile_depth": self.regfile_depth,
            "hardened_nets": sorted(self.hardened_nets),
            "hardened_row_group": self.hardened_row_group,
            "io_rows": list(self.io_rows),
        }


def validate_arch(spec: ArchSpec) -> list[str]:
    """Return every invariant violation; an empty list means the spec is well-formed"""
    violations = []
    if spec.rows < 1:
        violations.append("rows must be ≥ 1")
    if spec.cols < 1:
        violations.append("cols must be ≥ 1")
    if spec.tracks16 < 1:
        violations.append("tracks16 must be ≥ 1")
    if spec.tracks1 < 1:
        violations.append("tracks1 must be ≥ 1")
    if spec.pe_input_registers < 0:
        violations.append("pe_input_registers must be ≥ 0")
    if spec.regfile_depth < 1:
        violations.append("regfile_depth must be ≥ 1")
    if spec.hardened_row_group < 1:
        violations.append("hardened_row_group must be ≥ 1")
    for tile in spec.tiles():
        if tile not in spec.tile_kind:
            violations.append(f"tile {tile[0]},{tile[1]} has no kind")
    for tile, kind in sorted(spec.tile_kind.items()):
        if not spec.in_range(tile):
            violations.append(f"tile {tile[0]},{tile[1]} is outside the {spec.rows}x{spec.cols} grid")
        elif kind == TileKind.IO and tile[0] not in spec.io_rows:
            violations.append(f"IO tile {tile[0]},{tile[1]} is not in an IO row")
    return violations


# ---------------------------------------------------------------------------
# Routing-resource graph
# ---------------------------------------------------------------------------

class SbNode(NamedTuple):
    """Switch-box track endpoint; `io` is "in" for wires arriving, "out" for wires leaving"""
    row: int
    col: int
    side: Side
    track: int
    width: int
    io: str

    @property
    def tile(self) -> Tile:
        return (self.row, self.col)


class PortNode(NamedTuple):
    """Tile pin: a core/register output ("out") or a connection-box input ("in")"""
    row: int
    col: int
    pin: str
    width: int
    io: str

    @property
    def tile(self) -> Tile:
        return (self.row, self.col)


def reg_pin(slot: int, io: str) -> str:
    return f"reg{slot}.{io}"


def core_input_pins(kind: TileKind, width: int) -> list[str]:
    if kind == TileKind.PE:
        return ["core.in0", "core.in1", "core.in2"]
    if kind == TileKind.MEM:
        return ["core.in0"] if width == 16 else ["core.flush"]
    return ["core.in0"]


def core_output_widths(kind: TileKind) -> tuple[int, ...]:
    return (16,) if kind == TileKind.MEM else WIDTHS


class RoutingGraph:
    """Directed graph of programmable connections over SbNode/PortNode resources"""

    def __init__(self, spec: ArchSpec):
        self.spec = spec
        self.graph = nx.DiGraph()

    def register_site(self, node) -> bool:
        return bool(self.graph.nodes[node].get("register_site", False))

    def sb_nodes(self, io: Optional[str] = None, width: Optional[int] = None) -> list[SbNode]:
        return [
            n for n in self.graph.nodes
            if isinstance(n, SbNode) and (io is None or n.io == io) and (width is None or n.width == width)
        ]

    def port_nodes(self) -> list[PortNode]:
        return [n for n in self.graph.nodes if isinstance(n, PortNode)]

    def wire_edges(self, width: Optional[int] = None) -> list[tuple[SbNode, SbNode]]:
        return [
            (u, v) for u, v, kind in self.graph.edges(data="kind")
            if kind == "wire" and (width is None or u.width == width)
        ]

    def __len__(self) -> int:
        return self.graph.number_of_nodes()


def build_routing_graph(spec: ArchSpec) -> RoutingGraph:
    """Build the routing-resource graph in a stable node order"""
    violations = validate_arch(spec)
    if violations:
        raise ArchError(violations)

    rg = RoutingGraph(spec)
    g = rg.graph
    for tile in spec.tiles():
        kind = spec.kind(tile)
        r, c = tile
        for width in spec.widths():
            for side in SIDES:
                for track in range(spec.tracks(width)):
                    g.add_node(SbNode(r, c, side, track, width, "in"))
                    g.add_node(
                        SbNode(r, c, side, track, width, "out"),
                        register_site=spec.sb_register_sites,
                    )

            outputs = [reg_pin(k, "out") for k in range(spec.tracks(width))]
            inputs = [reg_pin(k, "in") for k in range(spec.tracks(width))]
            if width in core_output_widths(kind):
                outputs.append("core.out")
            inputs.extend(core_input_pins(kind, width))
            if kind == TileKind.PE:
                outputs.append("rf.out")
                inputs.append("rf.in")
            for pin in outputs:
                g.add_node(PortNode(r, c, pin, width, "out"))
            for pin in inputs:
                g.add_node(PortNode(r, c, pin, width, "in"))

            # tile output pins drive every switch-box output of their width
            for pin in outputs:
                src = PortNode(r, c, pin, width, "out")
                for side in SIDES:
                    for track in range(spec.tracks(width)):
                        g.add_edge(src, SbNode(r, c, side, track, width, "out"), kind="port")

            # disjoint switch box, no U-turns
            for side_in in SIDES:
                for side_out in SIDES:
                    if side_in == side_out:
                        continue
                    for track in range(spec.tracks(width)):
                        g.add_edge(
                            SbNode(r, c, side_in, track, width, "in"),
                            SbNode(r, c, side_out, track, width, "out"),
                            kind="sb",
                        )

            # connection boxes
            for side in SIDES:
                for track in range(spec.tracks(width)):
                    for pin in inputs:
                        g.add_edge(
                            SbNode(r, c, side, track, width, "in"),
                            PortNode(r, c, pin, width, "in"),
                            kind="cb",
                        )

            # register slots and the register file can be fed without leaving the tile
            for pin in outputs:
                for target in inputs:
                    if not (target.startswith("reg") or target == "rf.in"):
                        continue
                    if target.split(".")[0] == pin.split(".")[0]:
                        continue
                    g.add_edge(PortNode(r, c, pin, width, "out"), PortNode(r, c, target, width, "in"), kind="local")
            if kind == TileKind.PE:
                for target in core_input_pins(kind, width):
                    g.add_edge(PortNode(r, c, "rf.out", width, "out"), PortNode(r, c, target, width, "in"), kind="local")

    for tile in spec.tiles():
        for width in spec.widths():
            for side in SIDES:
                other = spec.neighbor(tile, side)
                if other is None:
                    continue
                for track in range(spec.tracks(width)):
                    g.add_edge(
                        SbNode(tile[0], tile[1], side, track, width, "out"),
                        SbNode(other[0], other[1], side.opposite, track, width, "in"),
                        kind="wire",
                    )

    logger.debug("routing graph: %d nodes, %d edges", g.number_of_nodes(), g.number_of_edges())
    return rg


# ---------------------------------------------------------------------------
# Timing model
# ---------------------------------------------------------------------------

class PathClass(NamedTuple):
    """One delay class of the timing model"""
    category: str
    tile_kind: Optional[TileKind] = None
    entry: Optional[Side] = None
    exit: Optional[Side] = None
    width: Optional[int] = None

    @property
    def key(self) -> str:
        if self.category == "hop":
            return f"{self.tile_kind.value}:{self.entry.value}:{self.exit.value}:{self.width}"
        if self.category == "core":
            return f"{self.tile_kind.value.lower()}_core"
        return self.category


def enumerate_tile_paths(spec: ArchSpec) -> list[PathClass]:
    """Every delay class a timing query may ask for on this architecture"""
    classes = []
    kinds = spec.kinds_present()
    for kind in kinds:
        for width in spec.widths():
            for entry in SIDES:
                for exit_side in SIDES:
                    classes.append(PathClass("hop", kind, entry, exit_side, width))
    for kind in kinds:
        if kind != TileKind.IO:
            classes.append(PathClass("core", kind))
    classes.extend([
        PathClass("cb_in"),
        PathClass("reg_clk_to_q"),
        PathClass("setup"),
        PathClass("clock_skew"),
    ])
    return classes


class DelayLibrary(BaseModel):
    """Worst-case delays in nanoseconds"""

    model_config = ConfigDict(frozen=True)

    pe_core_ns: float = 0.7
    mem_core_ns: float = 0.9
    sb_hop_ns: dict[tuple[TileKind, Side, Side, int], float] = Field(default_factory=dict)
    cb_in_ns: float = 0.05
    reg_clk_to_q_ns: float = 0.05
    setup_ns: float = 0.03
    clock_skew_ns: float = 0.02

    @classmethod
    def uniform(cls, spec: ArchSpec, hop_ns: float = 0.14, **kwargs) -> "DelayLibrary":
        """Library with the same hop delay for every switch-box class"""
        hops = {
            (pc.tile_kind, pc.entry, pc.exit, pc.width): hop_ns
            for pc in enumerate_tile_paths(spec) if pc.category == "hop"
        }
        return cls(sb_hop_ns=hops, **kwargs)

    def hop(self, kind: TileKind, entry: Side, exit_side: Side, width: int) -> float:
        return self.sb_hop_ns[(kind, entry, exit_side, width)]

    def core(self, kind: TileKind) -> float:
        if kind == TileKind.PE:
            return self.pe_core_ns
        if kind == TileKind.MEM:
            return self.mem_core_ns
        return 0.0

    def missing_classes(self, spec: ArchSpec) -> list[str]:
        return [
            pc.key for pc in enumerate_tile_paths(spec)
            if pc.category == "hop" and (pc.tile_kind, pc.entry, pc.exit, pc.width) not in self.sb_hop_ns
        ]

    def to_dict(self) -> dict:
        return {
            "pe_core": self.pe_core_ns,
            "mem_core": self.mem_core_ns,
            "cb_in": self.cb_in_ns,
            "reg_clk_to_q": self.reg_clk_to_q_ns,
            "setup": self.setup_ns,
            "clock_skew": self.clock_skew_ns,
            "sb_hop": {
                f"{k.value}:{a.value}:{b.value}:{w}": v
                for (k, a, b, w), v in sorted(self.sb_hop_ns.items(), key=lambda item: str(item[0]))
            },
        }


_SCALAR_KEYS = {
    "pe_core": "pe_core_ns",
    "mem_core": "mem_core_ns",
    "cb_in": "cb_in_ns",
    "reg_clk_to_q": "reg_clk_to_q_ns",
    "setup": "setup_ns",
    "clock_skew": "clock_skew_ns",
}


def _line_of(text: str, needle: str) -> Optional[int]:
    quoted = f'"{needle}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if quoted in line:
            return number
    return None


def _parse_json(text: str, error_cls):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        if error_cls is ArchError:
            raise ArchError([f"line {e.lineno}: {e.msg}"]) from e
        raise error_cls(e.msg, line=e.lineno) from e


def _hop_matches(pattern: tuple[str, str, str, str], pc: PathClass) -> bool:
    fields = (pc.tile_kind.value, pc.entry.value, pc.exit.value, str(pc.width))
    return all(p == "*" or p == f for p, f in zip(pattern, fields))


def load_delay_library(text: str, spec: ArchSpec) -> DelayLibrary:
    """Parse a delay library and check it covers every class of `spec`"""
    data = _parse_json(text, DelayLibraryError)
    if isinstance(data, dict) and "delays" in data:
        data = data["delays"]
    if not isinstance(data, dict):
        raise DelayLibraryError("delay library must be an object")

    values = {}
    for key, field in _SCALAR_KEYS.items():
        if key in data:
            value = data[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
                raise DelayLibraryError(f"{key} must be a non-negative number", line=_line_of(text, key))
            values[field] = float(value)

    patterns = []
    for key, value in (data.get("sb_hop") or {}).items():
        parts = key.split(":")
        line = _line_of(text, key)
        if len(parts) != 4:
            raise DelayLibraryError(f"hop key {key!r} must be KIND:ENTRY:EXIT:WIDTH", line=line)
        kind, entry, exit_side, width = parts
        if kind != "*" and kind not in TileKind.__members__:
            raise DelayLibraryError(f"unknown tile kind in {key!r}", line=line)
        for side in (entry, exit_side):
            if side != "*" and side not in Side.__members__:
                raise DelayLibraryError(f"unknown side in {key!r}", line=line)
        if width not in ("*", "16", "1"):
            raise DelayLibraryError(f"unknown track width in {key!r}", line=line)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
            raise DelayLibraryError(f"hop delay {key!r} must be a non-negative number", line=line)
        patterns.append(((kind, entry, exit_side, width), float(value)))

    # specific keys win over wildcards
    patterns.sort(key=lambda item: sum(p == "*" for p in item[0]), reverse=True)
    hops = {}
    for pc in enumerate_tile_paths(spec):
        if pc.category != "hop":
            continue
        for pattern, value in patterns:
            if _hop_matches(pattern, pc):
                hops[(pc.tile_kind, pc.entry, pc.exit, pc.width)] = value

    lib = DelayLibrary(sb_hop_ns=hops, **values)
    missing = lib.missing_classes(spec)
    if missing:
        raise DelayLibraryError(
            f"delay library misses {len(missing)} classes: " + ", ".join(missing[:8])
            + (" ..." if len(missing) > 8 else ""),
            missing=missing,
        )
    return lib


def parse_arch(data: dict) -> ArchSpec:
    """Build an ArchSpec from the "arch" object of an architecture file"""
    known = {
        "rows", "cols", "tiles", "mem_every", "tracks16", "tracks1", "sb_register_sites",
        "pe_input_registers", "regfile_depth", "hardened_nets", "hardened_row_group", "io_rows",
    }
    unknown = sorted(set(data) - known)
    if unknown:
        raise ArchError([f"unknown arch field {name!r}" for name in unknown])
    kwargs = {
        key: data[key]
        for key in ("tracks16", "tracks1", "sb_register_sites", "pe_input_registers", "regfile_depth", "hardened_row_group")
        if key in data
    }
    kwargs["hardened_nets"] = frozenset(data.get("hardened_nets", []))
    io_rows = tuple(data.get("io_rows", [0]))
    try:
        if "tiles" in data:
            spec = ArchSpec.from_rows(list(data["tiles"]), io_rows=io_rows, **kwargs)
            if "rows" in data or "cols" in data:
                spec = spec.model_copy(update={
                    "rows": data.get("rows", spec.rows),
                    "cols": data.get("cols", spec.cols),
                })
        else:
            spec = ArchSpec.standard(
                data["rows"], data["cols"], mem_every=data.get("mem_every", 4), io_rows=io_rows, **kwargs
            )
    except (KeyError, TypeError, ValueError) as e:
        raise ArchError([f"malformed arch: {e}"]) from e
    return spec


def load_arch(text: str) -> tuple[ArchSpec, Optional[DelayLibrary]]:
    """Parse an architecture file; the delay library is returned when present"""
    data = _parse_json(text, ArchError)
    if not isinstance(data, dict) or "arch" not in data:
        raise ArchError(["architecture file needs a top-level \"arch\" object"])
    spec = parse_arch(data["arch"])
    violations = validate_arch(spec)
    if violations:
        raise ArchError(violations)
    lib = load_delay_library(text, spec) if "delays" in data else None
    return spec, lib


def load_arch_file(path: str) -> tuple[ArchSpec, Optional[DelayLibrary]]:
    with open(path, "r", encoding="utf-8") as f:
        return load_arch(f.read())


def dump_arch(spec: ArchSpec, lib: Optional[DelayLibrary] = None) -> str:
    data = {"arch": spec.to_dict()}
    if lib is not None:
        data["delays"] = lib.to_dict()
    return json.dumps(data, indent=2)
