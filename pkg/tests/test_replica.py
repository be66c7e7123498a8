import random

import pytest

from capspace.errors import NodeDown, NotAReplica
from capspace.lattice import GCounter, Increment, bottom, fold_merge, leq
from capspace.replica import AntiEntropy, Datastore, Register
from capspace.simnet import Fixed, LinkModel, Simulator


def make(n=3, latency=5, seed=0, replicas=None):
    sim = Simulator(n, LinkModel(Fixed(latency)), seed)
    reg = Register("r", "gcounter", 0, replicas if replicas is not None else range(n))
    store = Datastore(sim, [reg])
    return sim, store, AntiEntropy(sim, store)


def test_register_requires_primary_among_replicas():
    with pytest.raises(ValueError):
        Register("r", "gset", 3, {0, 1})


def test_update_is_local():
    sim, store, _ = make()
    store.local_update(0, "r", Increment(0))
    vals = store.replica_values("r")
    assert vals[0] == GCounter({0: 1})
    assert vals[1] == vals[2] == bottom("gcounter")
    assert sim.messages_sent == 0


def test_concurrent_updates_diverge_until_sync():
    sim, store, ae = make()
    store.local_update(0, "r", Increment(0))
    store.local_update(1, "r", Increment(1))
    assert store.value(0, "r") != store.value(1, "r")
    ae.session(0, 1)
    sim.run_until(100)
    assert store.value(0, "r") == store.value(1, "r") == GCounter({0: 1, 1: 1})


def test_update_on_crashed_node():
    sim, store, _ = make()
    sim.set_node_status(2, False, at=0)
    sim.run_until(0)
    with pytest.raises(NodeDown):
        store.local_update(2, "r", Increment(2))


def test_not_a_replica():
    _, store, _ = make(replicas={0, 1})
    with pytest.raises(NotAReplica):
        store.local_read(2, "r")
    with pytest.raises(NotAReplica):
        store.local_update(2, "r", Increment(2))


def test_age_examples():
    sim, store, ae = make(replicas={0, 1})
    solo = Datastore(sim, [Register("s", "gset", 1, {1})])
    assert solo.local_read(1, "s", now=10_000) == (frozenset(), 0)
    assert store.age(0, "r", now=999) == 0  # primary
    sim.run_until(40)
    store.mark_synced(1, "r", 0)
    assert store.local_read(1, "r", now=100)[1] == 60
    sim.run_until(100)
    done = []
    ae.pull(1, "r", done.append)
    sim.run_until(200)
    assert done and store.age(1, "r", now=done[0].completed_at) == 0


def test_session_merges_both_sides():
    sim, store, ae = make(2)
    store.local_update(0, "r", Increment(0))
    store.local_update(1, "r", Increment(1))
    store.local_update(1, "r", Increment(1))
    s = ae.session(0, 1)
    sim.run_until(50)
    assert s.completed_at == 10
    assert store.value(0, "r") == store.value(1, "r") == GCounter({0: 1, 1: 2})
    assert sim.messages_sent == 2
    assert store.state(0, "r").last_sync[1] == 10


def test_session_across_partition_never_completes():
    sim, store, ae = make()
    store.local_update(1, "r", Increment(1))
    sim.set_partition([[0], [1, 2]], at=0)
    sim.run_until(1)
    before = store.replica_values("r")
    s = ae.session(0, 1)
    sim.run_until(500)
    assert s.completed_at is None
    assert store.replica_values("r") == before
    assert not any("kind=sync" in line for line in sim.trace)


def test_crash_recover_reconverges():
    sim, store, ae = make(seed=3)
    sim.set_node_status(2, False, at=5)
    sim.set_node_status(2, True, at=300)
    sim.run_until(10)
    store.local_update(0, "r", Increment(0))
    store.local_update(1, "r", Increment(1))
    ae.start_gossip(50, until=800)
    sim.run_until(250)
    assert store.value(2, "r") == bottom("gcounter")  # down: nothing arrives
    sim.run_until(1000)
    assert set(store.replica_values("r").values()) == {GCounter({0: 1, 1: 1})}


def test_crash_recover_without_traffic_is_noop():
    sim, store, _ = make()
    store.local_update(2, "r", Increment(2))
    before = store.replica_values("r")
    sim.set_node_status(2, False, at=10)
    sim.set_node_status(2, True, at=20)
    sim.run_until(30)
    assert store.replica_values("r") == before


def test_gossip_two_nodes_converges_by_200():
    sim, store, ae = make(2, latency=10, seed=7)
    sim.run_until(10)
    store.local_update(1, "r", Increment(1))
    ae.start_gossip(100, until=1000)
    sim.run_until(200)
    assert store.value(0, "r") == store.value(1, "r") == GCounter({1: 1})


def test_gossip_without_updates_stays_bottom():
    sim, store, ae = make()
    ae.start_gossip(50, until=300)
    sim.run_until(400)
    assert ae.sessions and all(s.completed_at is not None for s in ae.sessions)
    assert set(store.replica_values("r").values()) == {bottom("gcounter")}


def test_crashed_node_does_not_gossip():
    sim, store, ae = make()
    sim.set_node_status(2, False, at=0)
    ae.start_gossip(50, until=300)
    sim.run_until(400)
    assert all(2 not in (s.a,) for s in ae.sessions)
    assert all(s.completed_at is None for s in ae.sessions if s.b == 2)


@pytest.mark.parametrize("seed", range(10))
def test_updates_everywhere_converge_to_oracle(seed):
    rng = random.Random(seed)
    sim, store, ae = make(seed=seed)
    ae.start_gossip(30, until=1500)
    for _ in range(25):
        t = rng.randrange(0, 600)
        n = rng.randrange(3)
        sim.timer(t, n, "upd", lambda n=n: store.local_update(n, "r", Increment(n)))
    sim.set_partition([[0], [1, 2]], at=100)
    sim.heal(at=400)
    sim.run_until(2000)
    oracle = fold_merge("gcounter", [u.value for u in store.update_log])
    assert all(v == oracle for v in store.replica_values("r").values())


def test_replica_states_are_monotone_in_trace():
    sim, store, ae = make(seed=1)
    ae.start_gossip(20, until=400)
    for t in range(0, 300, 25):
        sim.timer(t, t % 3, "upd", lambda n=t % 3: store.local_update(n, "r", Increment(n)))
    history = {n: [store.value(n, "r")] for n in range(3)}
    orig = store._set

    def spy(node, reg_id, new, cause):
        history[node].append(new)
        orig(node, reg_id, new, cause)

    store._set = spy
    sim.run_until(500)
    for seq in history.values():
        assert all(leq(a, b) for a, b in zip(seq, seq[1:]))
