"""Per-sensor state machine for in-network global outlier detection.

Each node holds the points it originated (``own``) plus everything received
and still live (``points``), and per-neighbor records of what has crossed
each link in either direction. On every event it recomputes, per neighbor,
a *sufficient set* ``Z``: the points that could still change that
neighbor's estimate. ``Z`` starts from the node's current estimate and its
support, then closes under "support of the estimate my neighbor could form
from what it provably has", iterated to a fixed point. Only points not
already exchanged are broadcast.

With static data and a connected network this drives all nodes to the same,
correct estimate; the closure fixed point is exactly the invariant the
agreement argument needs, so it is checkable after every event
(``check_invariants``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .points import DataPoint, PointKey, dedup_by_key
from .rating import PoolView, RatingSpec, min_support, rank_all, select_top, support_of_set, top_n
from .ranker import IncrementalRanker

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """A malformed packet or corrupted state: indicates a harness bug."""


# ---------------------------------------------------------------------------
# Wire format and events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Packet:
    """One broadcast: per-recipient tagged point sets.

    A node's neighbors all overhear the same transmission; each extracts
    the entry tagged with its own id, if any.
    """

    sender: int
    entries: tuple  # ((recipient, (DataPoint, ...)), ...)

    def points_for(self, node_id: int) -> tuple:
        for recipient, pts in self.entries:
            if recipient == node_id:
                return pts
        return ()

    def total_points(self) -> int:
        return sum(len(pts) for _, pts in self.entries)

    def recipients(self) -> list[int]:
        return [r for r, _ in self.entries]


@dataclass(frozen=True)
class Init:
    pass


@dataclass(frozen=True)
class LocalDataChange:
    new: tuple = ()
    evicted: tuple = ()  # explicit point keys to drop


@dataclass(frozen=True)
class PacketArrival:
    packet: Packet


@dataclass(frozen=True)
class NeighborhoodChange:
    added: tuple = ()
    removed: tuple = ()


NodeEvent = Init | LocalDataChange | PacketArrival | NeighborhoodChange


# ---------------------------------------------------------------------------
# Node state
# ---------------------------------------------------------------------------

@dataclass
class Exchange:
    """What has crossed one link, from this node's point of view.

    Maps point key -> hop field as exchanged (0 everywhere in global mode).
    ``sent | recv`` is the set of points this node can prove the neighbor
    holds.
    """

    sent: dict = field(default_factory=dict)
    recv: dict = field(default_factory=dict)

    def knows(self, key: PointKey) -> bool:
        return key in self.sent or key in self.recv

    def known_keys(self) -> set:
        return set(self.sent) | set(self.recv)


class NodeState:
    """Single-owner protocol state for one sensor.

    ``window_s=None`` disables time-based eviction (static scenarios).
    ``hop_limit`` is set by the hop-bounded variant; the global algorithm
    leaves it None and ignores hop fields entirely.
    """

    def __init__(self, node_id: int, spec: RatingSpec, window_s: Optional[float] = None,
                 neighbors: Iterable[int] = (), hop_limit: Optional[int] = None):
        self.id = node_id
        self.spec = spec
        self.window_s = window_s
        self.hop_limit = hop_limit
        self.points: dict[PointKey, DataPoint] = {}
        self.own: set[PointKey] = set()
        self.exchanges: dict[int, Exchange] = {j: Exchange() for j in neighbors}
        self._ranker = IncrementalRanker(spec)

    @property
    def neighbors(self) -> set:
        return set(self.exchanges)

    # -- storage ------------------------------------------------------------

    def hold(self, pts: Sequence[DataPoint]):
        fresh = [p for p in pts if p.key not in self.points]
        for p in fresh:
            self.points[p.key] = p
        self._ranker.insert(fresh)

    def drop(self, keys: Iterable[PointKey]):
        keys = [k for k in keys if k in self.points]
        for k in keys:
            del self.points[k]
            self.own.discard(k)
        self._ranker.remove(keys)
        for ex in self.exchanges.values():
            for k in keys:
                ex.sent.pop(k, None)
                ex.recv.pop(k, None)

    def replace_point(self, new: DataPoint):
        """Swap in a lower-hop copy of an already-held point."""
        old = self.points[new.key]
        self.points[new.key] = new
        self._ranker.remove([old.key])
        self._ranker.insert([new])

    def points_list(self) -> list[DataPoint]:
        return self._ranker.points()

    def pool_view(self) -> PoolView:
        """Support-query view over the pool, cached until the pool changes."""
        cached = getattr(self, "_view_cache", None)
        if cached is None or cached[0] != self._ranker.version:
            cached = (self._ranker.version, PoolView(self.points_list(), self.spec))
            self._view_cache = cached
        return cached[1]

    def stratum_points(self, h: int) -> list[DataPoint]:
        return [p for p in self._ranker.points() if p.hop <= h]

    def top_n_points(self) -> list[DataPoint]:
        return select_top(self._ranker.points(), self._ranker.ranks(), self.spec.n)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def estimate(state: NodeState) -> list[DataPoint]:
    """The node's current belief: top-n of everything it holds."""
    return state.top_n_points()


def evict_expired(state: NodeState, now: float) -> NodeState:
    """Drop every point that slid out of the window, everywhere.

    The window is closed at ``now - w``: a point stamped exactly at the
    boundary is retained.
    """
    if state.window_s is None:
        return state
    threshold = now - state.window_s
    state.drop([k for k, p in state.points.items() if p.timestamp < threshold])
    return state


def ingest(state: NodeState, packet: Packet) -> NodeState:
    """Merge the points tagged for this node; duplicates are no-ops."""
    pts = packet.points_for(state.id)
    if not pts:
        raise ProtocolError(f"packet from {packet.sender} has no entry for node {state.id}")
    ex = state.exchanges[packet.sender]
    for p in pts:
        if p.key in state.points:
            continue
        state.hold([p])
        ex.recv[p.key] = p.hop
    return state


def on_neighbor_added(state: NodeState, j: int) -> NodeState:
    if j not in state.exchanges:
        state.exchanges[j] = Exchange()
    return state


def on_neighbor_removed(state: NodeState, j: int) -> NodeState:
    # Its points stay and age out of the window naturally.
    state.exchanges.pop(j, None)
    return state


def sufficiency_closure(pool: Sequence[DataPoint], pool_top: Sequence[DataPoint],
                        exchanged: Sequence[DataPoint], spec: RatingSpec,
                        extra_seed: Sequence[DataPoint] = (),
                        view: Optional[PoolView] = None) -> dict:
    """Smallest-effort fixed point of the sufficiency condition.

    Seeds with the estimate over ``pool`` plus its support (callers may add
    more seeds), then repeatedly adds the pool-support of the top-n of
    (exchanged + Z) until nothing new appears. Guaranteed to stop within
    |pool| rounds since Z grows monotonically inside a finite pool.
    Returns {key: point}.
    """
    if view is None:
        view = PoolView(pool, spec)
    z: dict[PointKey, DataPoint] = {}
    for p in pool_top:
        z[p.key] = p
    for s in view.support_of_set(pool_top):
        z.setdefault(s.key, s)
    for s in extra_seed:
        z.setdefault(s.key, s)
    base = {p.key: p for p in exchanged}
    for _ in range(len(pool) + 1):
        union = list(base.values()) + [p for k, p in z.items() if k not in base]
        believed = top_n(union, spec)
        grew = False
        for s in view.support_of_set(believed):
            if s.key not in z:
                z[s.key] = s
                grew = True
        if not grew:
            return z
    raise ProtocolError("sufficiency closure failed to reach a fixed point")


def compute_sufficient_set(state: NodeState, j: int) -> list[DataPoint]:
    """The points neighbor j must end up holding, per the fixed point."""
    if j not in state.exchanges:
        raise ProtocolError(f"node {state.id} has no neighbor {j}")
    ex = state.exchanges[j]
    pool = state.points_list()
    exchanged = [state.points[k] for k in ex.known_keys()]
    z = sufficiency_closure(pool, state.top_n_points(), exchanged, state.spec,
                            view=state.pool_view())
    return sorted(z.values(), key=DataPoint.tie_key)


def handle_event(state: NodeState, event: NodeEvent, now: float = 0.0):
    """Process one event; returns (state, packet-to-broadcast or None).

    Order: ingest/apply the event, evict expired points, then run the
    per-neighbor sufficiency loop and collect anything not yet exchanged.
    """
    if isinstance(event, PacketArrival):
        pkt = event.packet
        if pkt.sender not in state.exchanges:
            log.info("node %s ignoring packet from non-neighbor %s", state.id, pkt.sender)
            return state, None
        ingest(state, pkt)
    elif isinstance(event, LocalDataChange):
        fresh = [p for p in event.new if p.key not in state.points]
        state.hold(fresh)
        state.own.update(p.key for p in fresh)
        if event.evicted:
            state.drop(list(event.evicted))
    elif isinstance(event, NeighborhoodChange):
        for j in event.removed:
            on_neighbor_removed(state, j)
        for j in event.added:
            on_neighbor_added(state, j)
    elif not isinstance(event, Init):
        raise ProtocolError(f"unknown event {event!r}")

    evict_expired(state, now)

    entries = []
    for j in sorted(state.exchanges):
        ex = state.exchanges[j]
        z = compute_sufficient_set(state, j)
        outgoing = [p for p in z if not ex.knows(p.key)]
        if outgoing:
            entries.append((j, tuple(outgoing)))
            for p in outgoing:
                ex.sent[p.key] = p.hop
    if not entries:
        return state, None
    return state, Packet(sender=state.id, entries=tuple(entries))


# ---------------------------------------------------------------------------
# Debug invariants
# ---------------------------------------------------------------------------

def check_invariants(state: NodeState):
    """Assert the state a correct implementation must maintain.

    Cheap enough for tests and debug runs, not for production sweeps.
    """
    for k in state.own:
        assert k in state.points, f"own point {k} missing from pool"
    pool = state.points_list()
    assert len(pool) == len(state.points)
    for j, ex in state.exchanges.items():
        for k in ex.recv:
            assert k in state.points, f"received point {k} not held"
        for k in ex.sent:
            assert k in state.points, f"sent record {k} not held"
        # Post-event closure containment: the support of the estimate this
        # node believes j can form is already exchanged.
        exchanged = [state.points[k] for k in ex.known_keys()]
        if exchanged:
            believed = top_n(exchanged, state.spec)
            for s in support_of_set(pool, believed, state.spec):
                assert s.key in ex.sent or s.key in ex.recv, (
                    f"closure violated at node {state.id} toward {j}: "
                    f"{s.key} supports {[b.key for b in believed]} but was never exchanged"
                )
