"""Hop-bounded outlier detection: converge on the outliers within d hops.

Every point carries a hop counter (0 at birth, incremented each time it is
forwarded). A node holds at most one copy per point, the lowest-hop one.
Points whose counter has reached d are held but never re-forwarded, so data
diffuses exactly d hops from its origin: at quiescence a node's pool is
precisely the data born within its d-ball, with hop fields equal to true
hop distances, and its top-n estimate equals the d-ball ground truth.

Unlike the global algorithm, the hop-bounded sender offers a neighbor its
whole forwardable stratum (filtered against copies that already crossed
the link at an equal or lower hop) rather than a sufficiency closure. A
closure cannot work here: whether one of my points matters to a neighbor
depends on data I may never see (its other neighbors' balls reach outside
mine), so no locally-checkable trigger covers all cases; targeted sending
provably under-delivers on small chains. The per-link no-resend filter
still bounds traffic: a point crosses a link at most once per hop
improvement.

The regression suite pins a topology where the tempting shortcut (run the
global algorithm, just bound forwarded hops) answers wrongly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .points import DataPoint, PointKey
from .protocol import (
    Init,
    LocalDataChange,
    NeighborhoodChange,
    NodeEvent,
    NodeState,
    Packet,
    PacketArrival,
    ProtocolError,
    evict_expired,
    handle_event as handle_event_global,
    on_neighbor_added,
    on_neighbor_removed,
)
from .rating import RatingSpec, top_n

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HopConfig:
    """Hop diameter d >= 1; d=None means unbounded (global behavior)."""

    d: Optional[int] = None

    def __post_init__(self):
        if self.d is not None and self.d < 1:
            raise ValueError(f"hop diameter must be >= 1, got {self.d}")

    @property
    def bounded(self) -> bool:
        return self.d is not None


def min_hop_dedup(points: Sequence[DataPoint]) -> list[DataPoint]:
    """One representative per point identity: the minimal-hop copy.

    First-seen order is preserved; idempotent.
    """
    best: dict[PointKey, DataPoint] = {}
    order: list[PointKey] = []
    for p in points:
        cur = best.get(p.key)
        if cur is None:
            best[p.key] = p
            order.append(p.key)
        elif p.hop < cur.hop:
            best[p.key] = p
    return [best[k] for k in order]


def _ingest_hop_aware(state: NodeState, packet: Packet):
    pts = min_hop_dedup(packet.points_for(state.id))
    if not pts:
        raise ProtocolError(f"packet from {packet.sender} has no entry for node {state.id}")
    ex = state.exchanges[packet.sender]
    for p in pts:
        held = state.points.get(p.key)
        if held is None:
            state.hold([p])
            ex.recv[p.key] = p.hop
        elif p.hop < held.hop:
            # Better path found: swap the copy and move its attribution.
            state.replace_point(p)
            for other in state.exchanges.values():
                other.recv.pop(p.key, None)
            ex.recv[p.key] = p.hop
        # An equal-or-worse copy is dropped without bookkeeping.


def compute_sufficient_set_semiglobal(state: NodeState, j: int, cfg: HopConfig) -> list[DataPoint]:
    """Hop-incremented candidates for neighbor j, before the exchange filter.

    Everything below the hop ceiling is offered: points at hop <= d-1
    forward once more, points at hop d stay put.
    """
    d = cfg.d
    if d is None:
        raise ProtocolError("hop-bounded sufficiency requires a finite hop diameter")
    if j not in state.exchanges:
        raise ProtocolError(f"node {state.id} has no neighbor {j}")
    eligible = [p.with_hop(p.hop + 1) for p in state.points_list() if p.hop <= d - 1]
    return sorted(min_hop_dedup(eligible), key=DataPoint.tie_key)


def handle_event_semiglobal(state: NodeState, event: NodeEvent, now: float, cfg: HopConfig):
    """Hop-bounded event handler; with d=None this is the global algorithm."""
    if not cfg.bounded:
        return handle_event_global(state, event, now)
    if state.hop_limit != cfg.d:
        raise ProtocolError(
            f"node {state.id} was built with hop_limit={state.hop_limit}, got d={cfg.d}"
        )

    if isinstance(event, PacketArrival):
        pkt = event.packet
        if pkt.sender not in state.exchanges:
            log.info("node %s ignoring packet from non-neighbor %s", state.id, pkt.sender)
            return state, None
        _ingest_hop_aware(state, pkt)
    elif isinstance(event, LocalDataChange):
        fresh = [p for p in event.new if p.key not in state.points]
        state.hold(fresh)
        state.own.update(p.key for p in fresh)
        if event.evicted:
            state.drop(list(event.evicted))
    elif isinstance(event, NeighborhoodChange):
        for r in event.removed:
            on_neighbor_removed(state, r)
        for a in event.added:
            on_neighbor_added(state, a)
    elif not isinstance(event, Init):
        raise ProtocolError(f"unknown event {event!r}")

    evict_expired(state, now)

    entries = []
    candidates = None
    for j in sorted(state.exchanges):
        if candidates is None:
            candidates = compute_sufficient_set_semiglobal(state, j, cfg)
        ex = state.exchanges[j]
        outgoing = []
        for p in candidates:
            known = [v for v in (ex.sent.get(p.key), ex.recv.get(p.key)) if v is not None]
            if known and min(known) <= p.hop:
                continue
            outgoing.append(p)
        if outgoing:
            entries.append((j, tuple(outgoing)))
            for p in outgoing:
                prev = ex.sent.get(p.key)
                ex.sent[p.key] = p.hop if prev is None else min(prev, p.hop)
    if not entries:
        return state, None
    return state, Packet(sender=state.id, entries=tuple(entries))


def hop_ball_oracle(adjacency: dict, own_points: dict, node_id: int, d: Optional[int],
                    spec: RatingSpec) -> list[DataPoint]:
    """Ground truth: top-n over all data originating within d hops.

    BFS on the communication graph (test/metrics use only; needs global
    knowledge). d=None or d >= diameter covers everything reachable.
    """
    frontier = [node_id]
    seen = {node_id}
    depth = 0
    while frontier and (d is None or depth < d):
        depth += 1
        nxt = []
        for u in frontier:
            for v in adjacency.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    pool = [p for v in sorted(seen) for p in own_points.get(v, ())]
    return top_n(pool, spec)
