"""Shared test helpers: independent brute-force oracles and generators.

The oracles here deliberately avoid the library's vectorized code paths:
plain Python loops, exhaustive subset enumeration, full sorts. They are the
reference that the fast implementations are checked against.
"""

from __future__ import annotations

import itertools
import math
import random

import pytest

from outliernet.points import DataPoint, point
from outliernet.rating import RatingSpec


# ---------------------------------------------------------------------------
# Brute-force reference implementations
# ---------------------------------------------------------------------------

def brute_distance(a: DataPoint, b: DataPoint, weights=None) -> float:
    w = weights or [1.0] * len(a.rest)
    return math.sqrt(sum(wi * (x - y) ** 2 for wi, x, y in zip(w, a.rest, b.rest)))


def brute_rank(x: DataPoint, pool, spec: RatingSpec) -> float:
    dists = sorted(
        brute_distance(x, p, spec.weights) for p in pool if p.key != x.key
    )
    if not dists:
        return float("inf")
    if spec.kind == "nn":
        return dists[0]
    take = dists[: spec.k]
    return sum(take) / len(take)


def brute_top_n(pool, spec: RatingSpec, n=None):
    """Full sort on (-rank, tie order): the exhaustive second implementation."""
    pts = list(pool)
    n = spec.n if n is None else n
    ordered = sorted(pts, key=lambda p: (-brute_rank(p, pts, spec), p.tie_key()))
    return ordered[:n]


def brute_support_sets(pool, x: DataPoint, spec: RatingSpec, max_size=None):
    """All subsets S of pool with rank(x, S) == rank(x, pool), smallest first."""
    pts = [p for p in pool if p.key != x.key]
    target = brute_rank(x, pool, spec)
    out = []
    limit = len(pts) if max_size is None else min(max_size, len(pts))
    for size in range(0, limit + 1):
        for combo in itertools.combinations(pts, size):
            if brute_rank(x, list(combo), spec) == target:
                out.append(list(combo))
        if out:
            break
    return out


# ---------------------------------------------------------------------------
# Instance generators
# ---------------------------------------------------------------------------

def random_points(rng: random.Random, count: int, dim: int = 1, origin: int = 0,
                  spread: float = 100.0, epoch_base: int = 0):
    return [
        point(origin, epoch_base + i, *[rng.uniform(0, spread) for _ in range(dim)])
        for i in range(count)
    ]


def values_1d(values, origin: int = 0, timestamp: float = 0.0):
    """1-D points from a list of scalars, epochs by position."""
    return [point(origin, i, v, timestamp=timestamp) for i, v in enumerate(values)]


def random_connected_adjacency(rng: random.Random, n_nodes: int):
    """Random spanning tree plus a few extra edges; symmetric dict of sets."""
    adj = {i: set() for i in range(n_nodes)}
    order = list(range(n_nodes))
    rng.shuffle(order)
    for i in range(1, n_nodes):
        a, b = order[i], order[rng.randrange(i)]
        adj[a].add(b)
        adj[b].add(a)
    extra = rng.randrange(0, n_nodes)
    for _ in range(extra):
        a, b = rng.randrange(n_nodes), rng.randrange(n_nodes)
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def keys_of(points):
    return [p.key for p in points]


# ---------------------------------------------------------------------------
# Library-level synchronous driver (no simulator involved)
# ---------------------------------------------------------------------------

def drive_to_quiescence(states, adjacency, handler=None, now=0.0, max_events=None):
    """Init every node (id order) and shuttle packets until quiescence.

    Deliveries are processed before still-pending inits, matching the
    simulator's same-instant ordering. Returns a transcript of
    (sender, recipient, points) triples in delivery order.

    ``handler(state, event, now) -> (state, packet or None)`` defaults to
    the global algorithm.
    """
    from collections import deque

    from outliernet import protocol

    handler = handler or protocol.handle_event
    total_points = sum(len(s.points) for s in states.values())
    max_degree = max((len(v) for v in adjacency.values()), default=0)
    ceiling = max_events or max(
        64, len(states) * max(total_points, 1) * max(max_degree, 1) * 4
    )
    transcript = []
    deliveries = deque()
    inits = deque(sorted(states))
    processed = 0

    def dispatch(packet):
        for recipient, pts in packet.entries:
            if recipient in adjacency.get(packet.sender, ()):
                deliveries.append((recipient, packet))
            transcript.append((packet.sender, recipient, pts))

    while deliveries or inits:
        processed += 1
        assert processed <= ceiling, "no quiescence within the event ceiling"
        if deliveries:
            node_id, packet = deliveries.popleft()
            _, out = handler(states[node_id], protocol.PacketArrival(packet), now)
        else:
            node_id = inits.popleft()
            _, out = handler(states[node_id], protocol.Init(), now)
        if out is not None:
            dispatch(out)
    return transcript


def build_states(data_by_node, adjacency, spec, window_s=None, hop_limit=None):
    from outliernet.protocol import NodeState

    states = {}
    for node_id in sorted(adjacency):
        st = NodeState(node_id, spec, window_s=window_s,
                       neighbors=adjacency[node_id], hop_limit=hop_limit)
        pts = list(data_by_node.get(node_id, ()))
        st.hold(pts)
        st.own.update(p.key for p in pts)
        states[node_id] = st
    return states


def walkthrough_data(a=30, b=30):
    """The two-sensor 1-D datasets: node 0 holds the 0.5/3/6 side."""
    left = [0.5, 3.0, 6.0] + [float(v) for v in range(10, a + 1)]
    right = [4.0, 5.0, 7.0, 8.0, 9.0] + [float(v) for v in range(a + 1, a + b + 1)]
    return {0: values_1d(left, origin=0), 1: values_1d(right, origin=1)}


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
