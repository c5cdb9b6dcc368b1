"""
Ablation tables and fmax bar-chart data
"""
import json
import logging
from typing import Callable, Iterable, Optional

from pydantic import BaseModel
from rich.table import Table

from cgrapipe.arch import DelayLibrary
from cgrapipe.dfg import NodeKind
from cgrapipe.passes import PASS_NAMES
from cgrapipe.route import RoutedApp
from cgrapipe.sta import critical_path

logger = logging.getLogger(__name__)

ABLATION_LABELS = {
    "compute": "+compute",
    "broadcast": "+broadcast",
    "chains": "+chains",
    "placement": "+placement",
    "postpnr": "+post-PnR",
}


class ReportRow(BaseModel):
    """One compiled design in a comparison"""
    label: str
    critical_ns: float
    fmax_mhz: float
    sb_registers: int = 0
    reg_nodes: int = 0
    shift_depth: int = 0
    fifos: int = 0
    pe_input_registers: int = 0

    @property
    def registers(self) -> int:
        return self.sb_registers + self.reg_nodes + self.shift_depth + self.pe_input_registers


def ablation_prefixes(order: Iterable[str] = PASS_NAMES) -> list[tuple[str, set[str]]]:
    """`none` followed by each pass added on top of the previous selection"""
    prefixes = [("unpipelined", set())]
    chosen: set[str] = set()
    for name in order:
        chosen = chosen | {name}
        prefixes.append((ABLATION_LABELS[name], set(chosen)))
    return prefixes


def row_for(label: str, r: RoutedApp, lib: DelayLibrary) -> ReportRow:
    report = critical_path(r, lib)
    g = r.graph
    return ReportRow(
        label=label,
        critical_ns=round(report.total_ns, 6),
        fmax_mhz=round(report.fmax_mhz, 3),
        sb_registers=r.enabled_registers(),
        reg_nodes=len(g.nodes_of(NodeKind.REG)),
        shift_depth=sum(n.depth for n in g.nodes_of(NodeKind.SHIFT)),
        fifos=len(g.nodes_of(NodeKind.FIFO)),
        pe_input_registers=sum(sum(n.input_regs) for n in g.nodes_of(NodeKind.PE)),
    )


def run_ablation(
    compile_fn: Callable[[set[str]], RoutedApp],
    lib: DelayLibrary,
    order: Iterable[str] = PASS_NAMES,
) -> list[ReportRow]:
    """Compile once per pass prefix and tabulate the results"""
    rows = []
    for label, selection in ablation_prefixes(order):
        r = compile_fn(selection)
        row = row_for(label, r, lib)
        logger.info("ablation %s: %.3f ns", label, row.critical_ns)
        rows.append(row)
    return rows


def is_monotone(rows: list[ReportRow], tolerance: float = 1e-9) -> bool:
    """Critical path never grows from one row to the next"""
    return all(b.critical_ns <= a.critical_ns + tolerance for a, b in zip(rows, rows[1:]))


def speedup(rows: list[ReportRow]) -> Optional[float]:
    if len(rows) < 2 or rows[-1].critical_ns <= 0:
        return None
    return rows[0].critical_ns / rows[-1].critical_ns


def render_table(rows: list[ReportRow], title: str = "Pipelining ablation") -> Table:
    table = Table(title=title)
    table.add_column("Design", style="cyan")
    table.add_column("Critical path (ns)", justify="right")
    table.add_column("fmax (MHz)", justify="right", style="green")
    table.add_column("SB regs", justify="right")
    table.add_column("REG", justify="right")
    table.add_column("Shift depth", justify="right")
    table.add_column("FIFO", justify="right")
    table.add_column("PE in-regs", justify="right")
    for row in rows:
        table.add_row(
            row.label,
            f"{row.critical_ns:.3f}",
            f"{row.fmax_mhz:.1f}",
            str(row.sb_registers),
            str(row.reg_nodes),
            str(row.shift_depth),
            str(row.fifos),
            str(row.pe_input_registers),
        )
    return table


def render_text(rows: list[ReportRow]) -> str:
    """Plain-text table with the same columns as `render_table`"""
    header = f"{'design':<14}{'crit_ns':>10}{'fmax_mhz':>10}{'sb':>6}{'reg':>6}{'shift':>7}{'fifo':>6}{'pe_in':>7}"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row.label:<14}{row.critical_ns:>10.3f}{row.fmax_mhz:>10.1f}{row.sb_registers:>6}"
            f"{row.reg_nodes:>6}{row.shift_depth:>7}{row.fifos:>6}{row.pe_input_registers:>7}"
        )
    return "\n".join(lines) + "\n"


def fmax_bars(rows: list[ReportRow]) -> list[dict]:
    return [{"label": row.label, "fmax_mhz": row.fmax_mhz} for row in rows]


def dump_fmax_bars(rows: list[ReportRow]) -> str:
    return json.dumps(fmax_bars(rows), indent=2)
