"""Hop-bounded protocol: dedup, stratified sufficiency, oracle equivalence."""

import random
from functools import partial

import pytest

from outliernet.points import DataPoint, point
from outliernet.protocol import (
    Init,
    NodeState,
    Packet,
    PacketArrival,
    estimate,
    handle_event,
)
from outliernet.rating import RatingSpec, top_n
from outliernet.semiglobal import (
    HopConfig,
    compute_sufficient_set_semiglobal,
    handle_event_semiglobal,
    hop_ball_oracle,
    min_hop_dedup,
)

from conftest import (
    build_states,
    drive_to_quiescence,
    keys_of,
    random_connected_adjacency,
    random_points,
    values_1d,
    walkthrough_data,
)

NN = RatingSpec(kind="nn", n=1)
TWO_NODE = {0: {1}, 1: {0}}


def semihandler(d):
    return partial(handle_event_semiglobal, cfg=HopConfig(d))


def run_semiglobal(data, adjacency, spec, d):
    states = build_states(data, adjacency, spec, hop_limit=d)
    transcript = drive_to_quiescence(states, adjacency, handler=semihandler(d))
    return states, transcript


class TestMinHopDedup:
    def test_keeps_minimal_hop_per_identity(self):
        w = point(1, 0, 10.0, hop=1)
        v = point(1, 0, 10.0, hop=3)
        x = point(2, 5, 20.0, hop=0)
        y = point(2, 5, 20.0, hop=2)
        z = point(2, 5, 20.0, hop=4)
        got = min_hop_dedup([v, w, y, x, z])
        assert got == [w, x]

    def test_all_distinct_identities_pass_through(self):
        pts = values_1d([1, 2, 3])
        assert min_hop_dedup(pts) == pts

    def test_empty(self):
        assert min_hop_dedup([]) == []

    def test_idempotent(self):
        rng = random.Random(2)
        pts = []
        for i in range(30):
            base = point(i % 5, i % 7, float(rng.randrange(10)), hop=rng.randrange(4))
            pts.append(base)
        once = min_hop_dedup(pts)
        assert min_hop_dedup(once) == once


class TestUnboundedReduction:
    def test_unbounded_matches_global_packet_for_packet(self):
        data = walkthrough_data()
        g_states = build_states(data, TWO_NODE, NN)
        g_trace = drive_to_quiescence(g_states, TWO_NODE)
        s_states = build_states(data, TWO_NODE, NN)
        s_trace = drive_to_quiescence(s_states, TWO_NODE, handler=semihandler(None))
        assert [(s, r, keys_of(p)) for s, r, p in g_trace] == [
            (s, r, keys_of(p)) for s, r, p in s_trace
        ]
        for g, s in zip(g_states.values(), s_states.values()):
            assert keys_of(estimate(g)) == keys_of(estimate(s))


class TestChainLocality:
    def chain(self):
        adjacency = {0: {1}, 1: {0, 2}, 2: {1}}
        data = {
            0: values_1d([500.0, 501.0], origin=0),
            1: values_1d([0.0, 1.0, 2.0, 50.0], origin=1),
            2: values_1d([3.0, 4.0, 5.0], origin=2),
        }
        return adjacency, data

    def test_d1_keeps_far_points_out(self):
        adjacency, data = self.chain()
        states, _ = run_semiglobal(data, adjacency, NN, d=1)
        origins_at_2 = {k[0] for k in states[2].points}
        assert 0 not in origins_at_2
        want = keys_of(hop_ball_oracle(adjacency, data, 2, 1, NN))
        assert keys_of(estimate(states[2])) == want
        assert want == keys_of(top_n(data[1] + data[2], NN))

    def test_d2_sees_whole_chain(self):
        adjacency, data = self.chain()
        states, _ = run_semiglobal(data, adjacency, NN, d=2)
        for i, st in states.items():
            assert keys_of(estimate(st)) == keys_of(hop_ball_oracle(adjacency, data, i, 2, NN))

    def test_hop_fields_lower_bound_true_distance(self):
        adjacency, data = self.chain()
        for d in (1, 2, 3):
            states, _ = run_semiglobal(data, adjacency, NN, d=d)
            for i, st in states.items():
                for key, p in st.points.items():
                    true_dist = abs(i - key[0])  # chain topology
                    assert p.hop >= true_dist


class TestHopBallOracle:
    def test_d0_is_local_top(self):
        adjacency = {0: {1}, 1: {0}}
        data = {0: values_1d([1, 2, 9], origin=0), 1: values_1d([5], origin=1)}
        assert keys_of(hop_ball_oracle(adjacency, data, 0, 0, NN)) == keys_of(top_n(data[0], NN))

    def test_d_beyond_diameter_is_global(self):
        rng = random.Random(8)
        adjacency = random_connected_adjacency(rng, 6)
        data = {i: random_points(rng, 4, origin=i) for i in range(6)}
        union = [p for pts in data.values() for p in pts]
        for i in range(6):
            assert keys_of(hop_ball_oracle(adjacency, data, i, 10, NN)) == keys_of(top_n(union, NN))
            assert keys_of(hop_ball_oracle(adjacency, data, i, None, NN)) == keys_of(top_n(union, NN))


class TestReplacementByLowerHop:
    def test_lower_hop_copy_replaces_and_moves_attribution(self):
        st = NodeState(2, NN, neighbors=[0, 1], hop_limit=3)
        st.hold(values_1d([5.0, 6.0], origin=2))
        foreign = point(7, 0, 50.0, hop=2)
        handle_event_semiglobal(
            st, PacketArrival(Packet(sender=0, entries=((2, (foreign,)),))), 0.0, HopConfig(3)
        )
        assert st.points[foreign.key].hop == 2
        assert st.exchanges[0].recv[foreign.key] == 2

        better = foreign.with_hop(1)
        handle_event_semiglobal(
            st, PacketArrival(Packet(sender=1, entries=((2, (better,)),))), 0.0, HopConfig(3)
        )
        assert st.points[foreign.key].hop == 1
        assert foreign.key not in st.exchanges[0].recv
        assert st.exchanges[1].recv[foreign.key] == 1

    def test_worse_copy_dropped_without_bookkeeping(self):
        st = NodeState(2, NN, neighbors=[0, 1], hop_limit=3)
        foreign = point(7, 0, 50.0, hop=1)
        handle_event_semiglobal(
            st, PacketArrival(Packet(sender=0, entries=((2, (foreign,)),))), 0.0, HopConfig(3)
        )
        worse = foreign.with_hop(3)
        handle_event_semiglobal(
            st, PacketArrival(Packet(sender=1, entries=((2, (worse,)),))), 0.0, HopConfig(3)
        )
        assert st.points[foreign.key].hop == 1
        assert foreign.key not in st.exchanges[1].recv

    def test_better_copy_is_reforwarded(self):
        # Once a node learns a strictly shorter path to a point it already
        # relayed, the next sufficiency pass may ship the better copy; the
        # exchange filter only suppresses copies at equal-or-higher hop.
        st = NodeState(1, NN, neighbors=[2], hop_limit=3)
        st.hold(values_1d([1.0, 2.0], origin=1))
        lone = point(7, 0, 50.0, hop=2)
        st.hold([lone])
        st.exchanges[2].sent[lone.key] = 3  # previously relayed at hop 3
        z = compute_sufficient_set_semiglobal(st, 2, HopConfig(3))
        shipped = {p.key: p.hop for p in z}
        assert shipped.get(lone.key) == 3  # present, at hop 2+1
        _, pkt = handle_event_semiglobal(st, Init(), 0.0, HopConfig(3))
        assert pkt is not None
        hops = {p.key: p.hop for p in pkt.points_for(2)}
        assert hops.get(lone.key) is None  # 3 <= 3: filtered, not strictly better
        st.replace_point(lone.with_hop(1))
        _, pkt = handle_event_semiglobal(st, Init(), 0.0, HopConfig(3))
        assert pkt is not None
        hops = {p.key: p.hop for p in pkt.points_for(2)}
        assert hops.get(lone.key) == 2  # strictly better than the sent record


class TestStrataInvariants:
    def test_nesting_and_min_hop_uniqueness(self):
        rng = random.Random(77)
        d = 3
        adjacency = random_connected_adjacency(rng, 6)
        data = {i: random_points(rng, rng.randrange(1, 6), origin=i) for i in range(6)}
        states = build_states(data, adjacency, NN, hop_limit=d)
        drive_to_quiescence(states, adjacency, handler=semihandler(d))
        for st in states.values():
            strata = [set(p.key for p in st.stratum_points(h)) for h in range(d)]
            for lower, upper in zip(strata, strata[1:]):
                assert lower <= upper
            # one copy per identity, hop minimal among everything delivered
            assert len(st.points) == len({p.key for p in st.points.values()})


class TestSemiglobalOracleEquivalence:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_random_networks_match_hop_ball(self, d):
        rng = random.Random(1000 + d)
        for trial in range(12):
            n_nodes = rng.randrange(3, 9)
            adjacency = random_connected_adjacency(rng, n_nodes)
            spec = RatingSpec(kind=rng.choice(["nn", "knn"]), k=rng.choice([1, 2]),
                              n=rng.choice([1, 2]))
            dim = rng.choice([1, 2])
            data = {
                i: random_points(rng, rng.randrange(0, 7), dim=dim, origin=i)
                for i in range(n_nodes)
            }
            states, _ = run_semiglobal(data, adjacency, spec, d)
            for i, st in states.items():
                want = keys_of(hop_ball_oracle(adjacency, data, i, d, spec))
                got = keys_of(estimate(st))
                assert got == want, f"d={d} trial={trial} node={i}: {got} != {want}"


# ---------------------------------------------------------------------------
# The naive variant (increment + bound, no stratification) answers wrongly
# ---------------------------------------------------------------------------

def naive_handler(state, event, now, d):
    """Global sufficiency, hops incremented and bounded only at send time."""
    from outliernet.protocol import LocalDataChange, NeighborhoodChange, ProtocolError, ingest
    from outliernet.protocol import compute_sufficient_set, evict_expired
    from outliernet.semiglobal import _ingest_hop_aware

    if isinstance(event, PacketArrival):
        _ingest_hop_aware(state, event.packet)
    elif isinstance(event, Init):
        pass
    else:
        raise ProtocolError("naive test handler supports Init/PacketArrival only")
    evict_expired(state, now)
    entries = []
    for j in sorted(state.exchanges):
        ex = state.exchanges[j]
        outgoing = []
        for p in compute_sufficient_set(state, j):
            bumped = p.with_hop(p.hop + 1)
            if bumped.hop > d:
                continue
            rec = [v for v in (ex.sent.get(p.key), ex.recv.get(p.key)) if v is not None]
            if rec and min(rec) <= bumped.hop:
                continue
            outgoing.append(bumped)
        if outgoing:
            entries.append((j, tuple(outgoing)))
            for p in outgoing:
                prev = ex.sent.get(p.key)
                ex.sent[p.key] = p.hop if prev is None else min(prev, p.hop)
    return state, (Packet(sender=state.id, entries=tuple(entries)) if entries else None)


def test_naive_variant_is_wrong_on_frozen_chain():
    # Node 0's 49 sits right next to node 1's 50, so node 1's whole-pool
    # view never rates 50 an outlier and the naive variant never offers it
    # to node 2 -- whose 1-ball excludes 49 and whose true answer is 50.
    # The stratified sender ships node 1's own data regardless.
    adjacency = {0: {1}, 1: {0, 2}, 2: {1}}
    data = {
        0: values_1d([49.0], origin=0),
        1: values_1d([0.0, 1.0, 2.0, 50.0], origin=1),
        2: values_1d([3.0, 4.0, 5.0], origin=2),
    }
    d = 1
    oracle = keys_of(hop_ball_oracle(adjacency, data, 2, d, NN))

    naive_states = build_states(data, adjacency, NN)
    drive_to_quiescence(states=naive_states, adjacency=adjacency,
                        handler=partial(naive_handler, d=d))
    naive_answer = keys_of(estimate(naive_states[2]))
    assert naive_answer != oracle, "the frozen instance must expose the naive variant"

    strat_states, _ = run_semiglobal(data, adjacency, NN, d=d)
    assert keys_of(estimate(strat_states[2])) == oracle
