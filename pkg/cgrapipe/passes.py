"""
Pre-PnR graph transformations

Every pass returns a new graph whose output streams match the input's
modulo a constant latency offset.
"""
import logging
import math
from typing import Iterable, Optional

from pydantic import BaseModel, Field

from cgrapipe.arch import ArchSpec
from cgrapipe.dfg import AppGraph, Mode, Net, Node, NodeKind, Pin
from cgrapipe.pnr import Placement
from cgrapipe.sta import balance_branches

logger = logging.getLogger(__name__)

PASS_NAMES = ("compute", "broadcast", "chains", "placement", "postpnr")


class PassParams(BaseModel):
    chain_n: int = Field(4, ge=1)
    bcast_threshold: int = Field(8, ge=2)
    bcast_fanout: int = Field(4, ge=2)
    bcast_budget: int = Field(256, ge=0)
    fifo_depth: int = Field(2, ge=2)


def parse_pass_selection(text: str) -> set[str]:
    """`all`, `none` or a comma list of pass names"""
    text = text.strip().lower()
    if text == "all":
        return set(PASS_NAMES)
    if text in ("", "none"):
        return set()
    chosen = {p.strip() for p in text.split(",") if p.strip()}
    unknown = chosen - set(PASS_NAMES)
    if unknown:
        raise ValueError(f"unknown passes: {', '.join(sorted(unknown))}")
    return chosen


def _insert_fifo(g: AppGraph, pin: Pin, depth: int, prefix: str = "fifo") -> Node:
    net = g.input_net(pin.node, pin.port)
    fifo = Node(id=g.fresh_id(prefix), kind=NodeKind.FIFO, depth=depth)
    g.splice(net.id, [pin], fifo)
    return fifo


def compute_pipeline(g: AppGraph, spec: ArchSpec, fifo_depth: int = 2) -> AppGraph:
    """Enable every PE input register, then delay-match the branches

    Sparse graphs get a FIFO in front of every PE data input instead.
    """
    out = g.copy()
    pes = sorted(out.nodes_of(NodeKind.PE), key=lambda n: n.id)
    if out.mode == Mode.SPARSE:
        sink_of = out.sink_index()
        added = 0
        for pe in pes:
            for port in pe.data_ports:
                driver = out.nodes[sink_of[Pin(pe.id, port)].driver.node]
                if driver.kind == NodeKind.FIFO:
                    continue
                _insert_fifo(out, Pin(pe.id, port), fifo_depth)
                sink_of = out.sink_index()
                added += 1
        logger.info("compute pipelining: %d FIFOs at PE inputs", added)
        return out

    if spec.pe_input_registers < 1:
        logger.warning("compute pipelining: architecture has no PE input registers")
        return out
    for pe in pes:
        pe.input_regs = [True] * pe.n_inputs
    balanced, inserted = balance_branches(out)
    logger.info("compute pipelining: %d PEs registered, %d balancing registers", len(pes), inserted)
    return balanced


def _chain_link(g: AppGraph, node: Node, driver_of: dict[str, Net]) -> Optional[Node]:
    """Next REG of a chain: single fanout into a REG with the same scheduling"""
    net = driver_of.get(node.id)
    if net is None or len(net.sinks) != 1:
        return None
    nxt = g.nodes[net.sinks[0].node]
    if nxt.kind != NodeKind.REG or nxt.scheduled != node.scheduled:
        return None
    return nxt


def register_chains(g: AppGraph) -> list[list[str]]:
    """Maximal single-fanout REG chains, in head order"""
    driver_of = g.driver_index()
    followers = set()
    for node in g.nodes_of(NodeKind.REG):
        nxt = _chain_link(g, node, driver_of)
        if nxt is not None:
            followers.add(nxt.id)
    chains = []
    for head in sorted(n.id for n in g.nodes_of(NodeKind.REG) if n.id not in followers):
        chain = [head]
        nxt = _chain_link(g, g.nodes[head], driver_of)
        while nxt is not None:
            chain.append(nxt.id)
            nxt = _chain_link(g, nxt, driver_of)
        chains.append(chain)
    return chains


def collapse_register_chains(g: AppGraph, n_threshold: int, regfile_depth: int = 32) -> AppGraph:
    """Replace REG chains of at least `n_threshold` links with register-file SHIFTs"""
    out = g.copy()
    if out.mode == Mode.SPARSE:
        return out
    collapsed = 0
    for chain in register_chains(out):
        driver_of = out.driver_index()
        if len(chain) < n_threshold or chain[-1] not in driver_of:
            continue
        net_in = out.input_net(chain[0], "in0")
        net_out = driver_of[chain[-1]]
        scheduled = out.nodes[chain[0]].scheduled
        for reg_id in chain[:-1]:
            del out.nets[driver_of[reg_id].id]
        for reg_id in chain:
            del out.nodes[reg_id]

        depths = [regfile_depth] * (len(chain) // regfile_depth)
        if len(chain) % regfile_depth:
            depths.append(len(chain) % regfile_depth)
        upstream = net_in
        upstream.sinks = [s for s in upstream.sinks if s.node != chain[0]]
        for i, depth in enumerate(depths):
            shift = out.add_node(Node(id=out.fresh_id("shift"), kind=NodeKind.SHIFT, depth=depth, scheduled=scheduled))
            upstream.sinks.append(Pin(shift.id, "in0"))
            if i == len(depths) - 1:
                net_out.driver = Pin(shift.id, "out")
            else:
                upstream = out.add_net(Net(
                    id=out.fresh_id(f"{net_out.id}_s"), driver=Pin(shift.id, "out"), sinks=[], width=net_in.width,
                ))
        collapsed += 1
        logger.debug("collapsed %d-register chain into %s", len(chain), depths)
    logger.info("register chains: %d collapsed (threshold %d)", collapsed, n_threshold)
    return out


def _group(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def broadcast_tree_cost(fanout: int, max_fanout: int) -> int:
    """Registers in a balanced tree that limits every driver to `max_fanout` sinks"""
    count, level = 0, fanout
    while level > max_fanout:
        level = math.ceil(level / max_fanout)
        count += level
    return count


def _sink_order(sinks: Iterable[Pin], placement: Optional[Placement]) -> list[Pin]:
    if placement is None:
        return sorted(sinks)
    return sorted(sinks, key=lambda p: (placement.loc.get(p.node, (0, 0)), p))


def pipeline_broadcasts(
    g: AppGraph,
    fanout_threshold: int,
    max_fanout: int,
    max_new_regs: int,
    placement: Optional[Placement] = None,
    fifo_depth: int = 2,
) -> AppGraph:
    """Rewrite high-fanout nets as register trees (FIFO trees for sparse graphs)"""
    out = g.copy()
    sparse = out.mode == Mode.SPARSE
    budget = max_new_regs
    candidates = sorted(
        (n for n in out.nets.values() if not n.hardened and n.is_broadcast(fanout_threshold)),
        key=lambda n: (-len(n.sinks), n.id),
    )
    rewritten = 0
    for net in candidates:
        cost = broadcast_tree_cost(len(net.sinks), max_fanout)
        if cost > budget:
            logger.info("broadcast %s: tree needs %d registers, %d left in budget", net.id, cost, budget)
            continue
        budget -= cost
        level = _sink_order(net.sinks, placement)
        while len(level) > max_fanout:
            parents = []
            for group in _group(level, max_fanout):
                if sparse:
                    node = Node(id=out.fresh_id("bfifo"), kind=NodeKind.FIFO, depth=fifo_depth)
                else:
                    node = Node(id=out.fresh_id("breg"), kind=NodeKind.REG)
                out.splice(net.id, group, node)
                parents.append(Pin(node.id, "in0"))
            level = parents
        rewritten += 1
    logger.info("broadcast pipelining: %d nets rewritten, %d registers added", rewritten, max_new_regs - budget)
    if sparse:
        return out
    balanced, _ = balance_branches(out)
    return balanced


def run_passes(
    g: AppGraph,
    spec: ArchSpec,
    params: Optional[PassParams] = None,
    selection: Optional[set[str]] = None,
) -> AppGraph:
    """Apply the selected passes in their fixed order; branches are always delay-matched"""
    params = params or PassParams()
    selection = set(PASS_NAMES) if selection is None else selection
    out = g
    if "compute" in selection:
        out = compute_pipeline(out, spec, fifo_depth=params.fifo_depth)
    if "broadcast" in selection:
        out = pipeline_broadcasts(
            out, params.bcast_threshold, params.bcast_fanout, params.bcast_budget, fifo_depth=params.fifo_depth,
        )
    if out.mode == Mode.DENSE:
        out, _ = balance_branches(out)
    if "chains" in selection:
        out = collapse_register_chains(out, params.chain_n, spec.regfile_depth)
    return out
