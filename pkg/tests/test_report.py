"""
Tests for ablation tables
"""
from cgrapipe.arch import DelayLibrary
from cgrapipe.passes import PASS_NAMES
from cgrapipe.report import (
    ReportRow,
    ablation_prefixes,
    dump_fmax_bars,
    is_monotone,
    render_table,
    render_text,
    run_ablation,
    speedup,
)
from tests.conftest import straight_route


def test_ablation_prefixes():
    prefixes = ablation_prefixes()
    assert prefixes[0] == ("unpipelined", set())
    assert prefixes[-1][1] == set(PASS_NAMES)
    assert len(prefixes) == len(PASS_NAMES) + 1
    assert all(a[1] < b[1] for a, b in zip(prefixes, prefixes[1:]))


def test_ablation_with_fixed_design():
    """The same design for every selection gives a flat table"""
    r = straight_route(5)
    lib = DelayLibrary.uniform(r.spec)
    rows = run_ablation(lambda selection: r, lib)
    assert len(rows) == len(PASS_NAMES) + 1
    assert is_monotone(rows)
    assert speedup(rows) == 1.0


def test_ablation_shorter_routes_speed_up():
    """Each selected pass removes two hops from the stub design"""
    r0 = straight_route(0)
    lib = DelayLibrary.uniform(r0.spec)
    rows = run_ablation(lambda selection: straight_route(10 - 2 * len(selection)), lib)
    assert is_monotone(rows)
    assert speedup(rows) > 1.0
    assert not is_monotone(list(reversed(rows)))


def test_render():
    rows = [
        ReportRow(label="unpipelined", critical_ns=4.0, fmax_mhz=250.0),
        ReportRow(label="+compute", critical_ns=2.0, fmax_mhz=500.0, sb_registers=3, pe_input_registers=5),
    ]
    text = render_text(rows)
    assert text.splitlines()[2].startswith("+compute")
    assert "500.0" in text
    assert rows[1].registers == 8
    assert render_table(rows).row_count == 2
    assert '"fmax_mhz": 250.0' in dump_fmax_bars(rows)
