"""
Simulated-annealing placement

Per-net cost is (HPWL + gamma * pass_through) ** alpha. Before routing,
pass-through area is estimated as the number of core-free tiles inside the
net's bounding box.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, Field

from cgrapipe.arch import ArchSpec, Tile, TileKind
from cgrapipe.dfg import AppGraph, Net, NodeKind
from cgrapipe.errors import CapacityError, PlacementError

logger = logging.getLogger(__name__)

TILE_FOR_NODE = {
    NodeKind.PE: TileKind.PE,
    NodeKind.MEM: TileKind.MEM,
    NodeKind.IO_IN: TileKind.IO,
    NodeKind.IO_OUT: TileKind.IO,
}


class PnrParams(BaseModel):
    """Placement and routing knobs"""
    alpha: float = Field(1.5, ge=1.0)
    gamma: float = Field(1.0, ge=0.0)
    seed: int = 0
    initial_temp: Optional[float] = None
    cooling_rate: float = Field(0.95, gt=0.0, lt=1.0)
    moves_per_temp: Optional[int] = None
    # annealing stops below initial_temp * min_temp_ratio or after `patience` flat steps
    min_temp_ratio: float = Field(0.005, gt=0.0, lt=1.0)
    patience: int = Field(12, ge=1)
    route_iter_limit: int = Field(40, ge=1)
    congestion_growth: float = Field(1.5, gt=1.0)


@dataclass
class Placement:
    loc: dict[str, Tile] = field(default_factory=dict)
    cost: float = 0.0
    initial_cost: float = 0.0

    def tile_of(self, node_id: str) -> Tile:
        try:
            return self.loc[node_id]
        except KeyError as e:
            raise PlacementError(f"node {node_id!r} is not placed") from e

    def occupied(self) -> set[Tile]:
        return set(self.loc.values())


def _bbox(tiles: Iterable[Tile]) -> tuple[int, int, int, int]:
    rows = [t[0] for t in tiles]
    cols = [t[1] for t in tiles]
    return min(rows), max(rows), min(cols), max(cols)


def _hpwl_tiles(tiles: list[Tile]) -> int:
    r0, r1, c0, c1 = _bbox(tiles)
    return (r1 - r0) + (c1 - c0)


def _pass_through(tiles: list[Tile], occupied: set[Tile]) -> int:
    r0, r1, c0, c1 = _bbox(tiles)
    return sum(
        1 for r in range(r0, r1 + 1) for c in range(c0, c1 + 1) if (r, c) not in occupied
    )


def wirelength_cost(hpwl_value: float, pass_through: float, params: PnrParams) -> float:
    return (hpwl_value + params.gamma * pass_through) ** params.alpha


def hpwl(net: Net, placement: Placement) -> int:
    """Half perimeter of the bounding box over driver and sink tiles"""
    tiles = [placement.tile_of(net.driver.node)] + [placement.tile_of(s.node) for s in net.sinks]
    return _hpwl_tiles(tiles)


def net_cost(net: Net, placement: Placement, params: PnrParams, occupied: Optional[set[Tile]] = None) -> float:
    tiles = [placement.tile_of(net.driver.node)] + [placement.tile_of(s.node) for s in net.sinks]
    if occupied is None:
        occupied = placement.occupied()
    return wirelength_cost(_hpwl_tiles(tiles), _pass_through(tiles, occupied), params)


def placement_nets(g: AppGraph) -> list[list[str]]:
    """Endpoint groups seen by the placer: floating register chains are looked through"""
    driver_of = g.driver_index()
    groups = []
    for net in g.nets.values():
        if net.hardened or g.nodes[net.driver.node].is_floating:
            continue
        endpoints = [net.driver.node]
        stack = [s.node for s in net.sinks]
        seen = set()
        while stack:
            node_id = stack.pop()
            if node_id in seen:
                continue
            seen.add(node_id)
            if g.nodes[node_id].is_floating:
                downstream = driver_of.get(node_id)
                if downstream is not None:
                    stack.extend(s.node for s in downstream.sinks)
            elif node_id not in endpoints:
                endpoints.append(node_id)
        if len(endpoints) > 1:
            groups.append(endpoints)
    return groups


def longest_net(g: AppGraph, placement: Placement) -> int:
    return max((_hpwl_tiles([placement.loc[n] for n in group]) for group in placement_nets(g)), default=0)


class _Move(NamedTuple):
    node: str
    source: Tile
    target: Tile
    other: Optional[str]


class _Annealer:
    """Incremental cost bookkeeping for one placement run"""

    def __init__(self, g: AppGraph, spec: ArchSpec, params: PnrParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng
        self.nodes = sorted(n.id for n in g.nodes.values() if n.kind in TILE_FOR_NODE)
        self.tile_kind = {n: TILE_FOR_NODE[g.nodes[n].kind] for n in self.nodes}
        self.tiles = {kind: spec.tiles_of(kind) for kind in TileKind}
        self.nets = placement_nets(g)
        self.nets_of: dict[str, list[int]] = {n: [] for n in self.nodes}
        for i, group in enumerate(self.nets):
            for node_id in group:
                self.nets_of[node_id].append(i)

        self.loc: dict[str, Tile] = {}
        self.occ: dict[Tile, str] = {}
        for kind in TileKind:
            members = [n for n in self.nodes if self.tile_kind[n] == kind]
            order = self.rng.permutation(len(self.tiles[kind]))
            for node_id, idx in zip(members, order):
                tile = self.tiles[kind][int(idx)]
                self.loc[node_id] = tile
                self.occ[tile] = node_id
        self.costs = [self._net_cost(i) for i in range(len(self.nets))]
        self.total = sum(self.costs)

    def _net_cost(self, i: int) -> float:
        tiles = [self.loc[n] for n in self.nets[i]]
        return wirelength_cost(_hpwl_tiles(tiles), _pass_through(tiles, self.occ.keys()), self.params)

    def _touching(self, tiles: list[Tile]) -> set[int]:
        hit = set()
        for i, group in enumerate(self.nets):
            r0, r1, c0, c1 = _bbox([self.loc[n] for n in group])
            if any(r0 <= t[0] <= r1 and c0 <= t[1] <= c1 for t in tiles):
                hit.add(i)
        return hit

    def propose(self) -> Optional[_Move]:
        node_id = self.nodes[int(self.rng.integers(len(self.nodes)))]
        candidates = self.tiles[self.tile_kind[node_id]]
        if len(candidates) < 2:
            return None
        target = candidates[int(self.rng.integers(len(candidates)))]
        source = self.loc[node_id]
        if target == source:
            return None
        return _Move(node_id, source, target, self.occ.get(target))

    def _relocate(self, node_id: str, source: Tile, target: Tile, other: Optional[str]) -> None:
        if other is not None:
            self.loc[other] = source
            self.occ[source] = other
        else:
            del self.occ[source]
        self.loc[node_id] = target
        self.occ[target] = node_id

    def apply(self, move: _Move) -> tuple[float, dict[int, float]]:
        """Apply a move; returns the cost delta and the previous cost of touched nets"""
        affected = set(self.nets_of[move.node])
        if move.other is not None:
            affected.update(self.nets_of[move.other])
        else:
            # occupancy changes, so nets spanning either tile see new pass-through counts
            affected.update(self._touching([move.source, move.target]))
        self._relocate(move.node, move.source, move.target, move.other)
        if move.other is None:
            affected.update(self._touching([move.source, move.target]))

        previous = {i: self.costs[i] for i in affected}
        delta = 0.0
        for i in sorted(affected):
            new = self._net_cost(i)
            delta += new - self.costs[i]
            self.costs[i] = new
        self.total += delta
        return delta, previous

    def undo(self, move: _Move, delta: float, previous: dict[int, float]) -> None:
        self._relocate(move.node, move.target, move.source, move.other)
        for i, cost in previous.items():
            self.costs[i] = cost
        self.total -= delta

    def step(self, temperature: float) -> bool:
        move = self.propose()
        if move is None:
            return False
        delta, previous = self.apply(move)
        if delta <= 0 or self.rng.random() < math.exp(-delta / temperature):
            return True
        self.undo(move, delta, previous)
        return False


def place(g: AppGraph, spec: ArchSpec, params: Optional[PnrParams] = None) -> Placement:
    """Place every core node with simulated annealing; deterministic for a given seed"""
    params = params or PnrParams()
    need: dict[TileKind, int] = {}
    for node in g.nodes.values():
        if node.kind in TILE_FOR_NODE:
            need[TILE_FOR_NODE[node.kind]] = need.get(TILE_FOR_NODE[node.kind], 0) + 1
    deficit = {
        kind.value: n - len(spec.tiles_of(kind))
        for kind, n in need.items() if n > len(spec.tiles_of(kind))
    }
    if deficit:
        raise CapacityError(deficit)

    rng = np.random.default_rng(params.seed)
    sa = _Annealer(g, spec, params, rng)
    initial_cost = sa.total
    best_loc, best_cost = dict(sa.loc), sa.total
    if not sa.nets:
        logger.info("placement: no nets, keeping initial placement")
        return Placement(loc=best_loc, cost=0.0, initial_cost=0.0)

    temperature = params.initial_temp
    if temperature is None:
        deltas = []
        for _ in range(100):
            move = sa.propose()
            if move is None:
                continue
            delta, previous = sa.apply(move)
            deltas.append(delta)
            sa.undo(move, delta, previous)
        temperature = float(np.std(deltas)) if deltas else 1.0
        if temperature <= 0:
            temperature = 1.0
    floor = temperature * params.min_temp_ratio
    moves = params.moves_per_temp or 10 * len(sa.nodes)

    flat = 0
    while temperature > floor and flat < params.patience:
        improved = False
        for _ in range(moves):
            if sa.step(temperature) and sa.total < best_cost - 1e-9:
                best_cost = sa.total
                best_loc = dict(sa.loc)
                improved = True
        flat = 0 if improved else flat + 1
        temperature *= params.cooling_rate
        logger.debug("anneal T=%.4f cost=%.3f best=%.3f", temperature, sa.total, best_cost)

    # recompute exactly; the running total accumulates float error
    final = Placement(loc=best_loc, initial_cost=initial_cost)
    occupied = final.occupied()
    final.cost = sum(
        wirelength_cost(_hpwl_tiles([best_loc[n] for n in group]), _pass_through([best_loc[n] for n in group], occupied), params)
        for group in sa.nets
    )
    logger.info("placement: cost %.3f (initial %.3f), %d nodes", final.cost, initial_cost, len(sa.nodes))
    return final
