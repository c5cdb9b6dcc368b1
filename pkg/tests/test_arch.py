"""
Tests for the architecture model, routing graph and delay library
"""
import json

import pytest

from cgrapipe.arch import (
    ArchSpec,
    DelayLibrary,
    SbNode,
    Side,
    TileKind,
    build_routing_graph,
    dump_arch,
    enumerate_tile_paths,
    load_arch,
    load_arch_file,
    load_delay_library,
    validate_arch,
)
from cgrapipe.errors import ArchError, DelayLibraryError
from tests.conftest import DATA


def test_standard_layout():
    """IO on the top row, MEM every fourth column, PE elsewhere"""
    spec = ArchSpec.standard(8, 8)
    assert validate_arch(spec) == []
    assert spec.kind((0, 5)) == TileKind.IO
    assert spec.kind((1, 3)) == TileKind.MEM
    assert spec.kind((4, 7)) == TileKind.MEM
    assert spec.kind((4, 0)) == TileKind.PE
    assert len(spec.tiles_of(TileKind.MEM)) == 14


def test_validate_reports_violations():
    """Missing tiles and stray IO tiles are returned as data"""
    ragged = ArchSpec.from_rows(["PP", "P"])
    assert any("1,1 has no kind" in v for v in validate_arch(ragged))

    stray_io = ArchSpec.from_rows(["PP", "IP"])
    assert any("not in an IO row" in v for v in validate_arch(stray_io))

    with pytest.raises(ArchError):
        build_routing_graph(ragged)


def test_switch_box_is_disjoint_without_u_turns():
    """Track k entering a side leaves on the other three sides, same track"""
    spec = ArchSpec.standard(3, 3)
    rg = build_routing_graph(spec)
    src = SbNode(1, 1, Side.N, 2, 16, "in")
    exits = {
        v for v in rg.graph.successors(src)
        if rg.graph.edges[src, v]["kind"] == "sb"
    }
    assert exits == {SbNode(1, 1, side, 2, 16, "out") for side in (Side.S, Side.E, Side.W)}

    out = SbNode(1, 1, Side.E, 0, 16, "out")
    assert rg.graph.has_edge(out, SbNode(1, 2, Side.W, 0, 16, "in"))
    assert rg.register_site(out)


def test_register_sites_follow_the_spec():
    """No register sites when the architecture disables them"""
    spec = ArchSpec.standard(3, 3, sb_register_sites=False)
    rg = build_routing_graph(spec)
    assert not any(rg.register_site(n) for n in rg.sb_nodes(io="out"))


def test_hop_class_count():
    """Four entry sides, four exit sides and two widths per tile kind"""
    pe_only = ArchSpec.from_rows(["PP", "PP"], io_rows=())
    hops = [pc for pc in enumerate_tile_paths(pe_only) if pc.category == "hop"]
    assert len(hops) == 32

    mixed = ArchSpec.from_rows(["PM"], io_rows=())
    hops = [pc for pc in enumerate_tile_paths(mixed) if pc.category == "hop"]
    assert len(hops) == 64


def test_delay_library_wildcards_and_overrides():
    """Specific hop keys win over wildcards"""
    spec = ArchSpec.from_rows(["PP", "PP"], io_rows=())
    text = json.dumps({"pe_core": 0.7, "sb_hop": {"*:*:*:*": 0.14, "PE:N:S:16": 0.2}})
    lib = load_delay_library(text, spec)
    assert lib.pe_core_ns == 0.7
    assert lib.hop(TileKind.PE, Side.E, Side.W, 16) == 0.14
    assert lib.hop(TileKind.PE, Side.N, Side.S, 16) == 0.2
    assert lib.missing_classes(spec) == []


def test_delay_library_rejects_negative_and_missing():
    """Negative delays and uncovered classes are errors"""
    spec = ArchSpec.from_rows(["PM"], io_rows=())
    with pytest.raises(DelayLibraryError):
        load_delay_library(json.dumps({"sb_hop": {"*:*:*:*": -0.1}}), spec)

    with pytest.raises(DelayLibraryError) as excinfo:
        load_delay_library(json.dumps({"sb_hop": {"PE:*:*:*": 0.14}}), spec)
    assert "MEM:N:S:16" in excinfo.value.missing


@pytest.mark.parametrize("text", [
    '{"pe_core": true, "sb_hop": {"*:*:*:*": 0.14}}',
    '{"setup": false, "sb_hop": {"*:*:*:*": 0.14}}',
    '{"sb_hop": {"*:*:*:*": true}}',
])
def test_delay_library_rejects_booleans(text):
    """JSON true and false are not delays"""
    with pytest.raises(DelayLibraryError):
        load_delay_library(text, ArchSpec.from_rows(["PM"], io_rows=()))


def test_delay_library_error_has_line_number():
    """Bad keys are reported with the line they sit on"""
    spec = ArchSpec.from_rows(["PP"], io_rows=())
    text = '{\n  "sb_hop": {\n    "PE:N:X:16": 0.1\n  }\n}'
    with pytest.raises(DelayLibraryError) as excinfo:
        load_delay_library(text, spec)
    assert excinfo.value.line == 3


def test_shipped_architecture_file():
    """The default 8x8 file parses with its delay library"""
    spec, lib = load_arch_file(str(DATA / "arch_8x8.json"))
    assert (spec.rows, spec.cols) == (8, 8)
    assert lib is not None
    assert lib.pe_core_ns == 0.7
    assert lib.hop(TileKind.MEM, Side.W, Side.E, 1) == 0.14
    assert "flush" in spec.hardened_nets


def test_load_arch_errors():
    """Malformed text and unknown fields raise ArchError"""
    with pytest.raises(ArchError):
        load_arch("{")
    with pytest.raises(ArchError):
        load_arch(json.dumps({"arch": {"rows": 2, "cols": 2, "colour": "blue"}}))
    with pytest.raises(ArchError):
        load_arch(json.dumps({"arch": {"rows": 0, "cols": 2}}))
    with pytest.raises(ArchError):
        load_arch(json.dumps({"arch": {"rows": 2, "cols": 2, "hardened_row_group": 0}}))


def test_dump_and_load_arch():
    """A dumped architecture loads back unchanged"""
    spec = ArchSpec.standard(4, 8, tracks16=3, hardened_nets=frozenset({"flush"}), hardened_row_group=2)
    lib = DelayLibrary.uniform(spec, hop_ns=0.2)
    loaded_spec, loaded_lib = load_arch(dump_arch(spec, lib))
    assert loaded_spec == spec
    assert loaded_lib == lib


def test_region():
    """A region keeps the kinds of the corner it covers"""
    spec = ArchSpec.standard(8, 8)
    half = spec.region(8, 4)
    assert (half.rows, half.cols) == (8, 4)
    assert half.kind((1, 3)) == TileKind.MEM
    assert validate_arch(half) == []
    with pytest.raises(ArchError):
        spec.region(9, 1)
