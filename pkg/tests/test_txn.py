import pytest

from capspace.lattice import GCounter, Increment, bottom, query
from capspace.replica import Datastore, Register
from capspace.simnet import Fixed, LinkModel, Simulator
from capspace.txn import EXCLUSIVE, SHARED, LockTable, Read, TxnManager, TxnState, Write


def make(n=3, latency=10, regs=("r1",)):
    sim = Simulator(n, LinkModel(Fixed(latency)))
    store = Datastore(sim, [Register(r, "gcounter", 0, range(n)) for r in regs])
    return sim, store, TxnManager(sim, store, retry_ms=2 * latency + 1)


def commits(sim, txn_id):
    return [l for l in sim.trace if f"txn={txn_id} commit" in l and "kind=txn" in l]


def test_lock_table_modes():
    lt = LockTable()
    assert lt.request("a", "r", SHARED)
    assert lt.request("b", "r", SHARED)
    assert not lt.request("c", "r", EXCLUSIVE)
    assert not lt.request("d", "r", SHARED)  # FIFO: waits behind c
    assert lt.release("a") == []
    assert lt.release("b") == [("c", "r", EXCLUSIVE)]
    assert lt.release("c") == [("d", "r", SHARED)]
    assert lt.request("d", "r", SHARED)  # idempotent


def test_commit_takes_at_least_four_message_delays():
    sim, store, tm = make()
    t = tm.begin(1, [Write("r1", Increment(1))])
    sim.run_until(1000)
    assert tm.two_phase_commit(t) is TxnState.COMMITTED
    assert t.decided_at >= 40
    assert t.decided_at == 60  # lock+grant at primary, then others, then prepare+vote
    assert set(store.replica_values("r1").values()) == {GCounter({1: 1})}
    assert tm.lock_tables() == {0: {}, 1: {}, 2: {}}


def test_two_concurrent_increments_no_lost_update():
    sim, store, tm = make()
    a = tm.begin(1, [Read("r1"), Write("r1", Increment(1))])
    b = tm.begin(2, [Read("r1"), Write("r1", Increment(2))])
    sim.run_until(2000)
    assert a.state is b.state is TxnState.COMMITTED
    assert sorted([a.observed[0], b.observed[0]]) == [0, 1]
    assert {v for v in store.replica_values("r1").values()} == {GCounter({1: 1, 2: 1})}


def test_ordered_locking_avoids_deadlock():
    sim, store, tm = make(regs=("r1", "r2"))
    a = tm.begin(1, [Write("r2", Increment(1)), Write("r1", Increment(1))])
    b = tm.begin(2, [Write("r1", Increment(2)), Write("r2", Increment(2))])
    sim.run_until(5000)
    assert a.state is b.state is TxnState.COMMITTED
    assert sorted([a.decided_at, b.decided_at])[0] < sorted([a.decided_at, b.decided_at])[1]


def test_readers_share_locks():
    sim, store, tm = make()
    a = tm.begin(1, [Read("r1")])
    b = tm.begin(2, [Read("r1")])
    sim.run_until(35)
    assert tm.participants[0].locks.snapshot()["r1"] == ({a.id: SHARED, b.id: SHARED}, [])
    sim.run_until(1000)
    assert a.decided_at == b.decided_at == 60


def test_blocked_under_partition_in_pure_mode():
    sim, store, tm = make()
    sim.set_partition([[0], [1, 2]], at=0)
    t = tm.begin(1, [Write("r1", Increment(1))])
    sim.run_until(5000)
    assert t.state is TxnState.LOCKING
    assert not commits(sim, t.id)
    sim.heal(at=5000)
    sim.run_until(6000)
    assert t.state is TxnState.COMMITTED and t.decided_at > 5000


def test_measured_deadline_aborts():
    sim, store, tm = make()
    sim.set_partition([[0], [1, 2]], at=0)
    t = tm.begin(1, [Write("r1", Increment(1))], deadline=50)
    sim.run_until(1000)
    assert t.state is TxnState.ABORTED and t.decided_at == 50 and t.reason == "deadline"
    assert set(store.replica_values("r1").values()) == {bottom("gcounter")}


def test_participant_crash_before_vote_aborts_without_changes():
    sim, store, tm = make()
    # all grants arrive by t=40; PREPARE reaches node 2 at t=50
    sim.set_node_status(2, False, at=45)
    t = tm.begin(1, [Write("r1", Increment(1))], deadline=200)
    sim.run_until(1000)
    assert t.state is TxnState.ABORTED
    assert set(store.replica_values("r1").values()) == {bottom("gcounter")}


def test_recovered_participant_votes_no():
    sim, store, tm = make()
    sim.set_node_status(2, False, at=45)
    sim.set_node_status(2, True, at=55)
    t = tm.begin(1, [Write("r1", Increment(1))])
    sim.run_until(1000)
    assert t.state is TxnState.ABORTED and "voted no" in t.reason
    assert any("node=2" in l and "vote=no" in l and "kind=vote" in l for l in sim.trace)
    assert tm.lock_tables() == {0: {}, 1: {}, 2: {}}


def test_duplicate_commit_applied_once():
    sim, store, tm = make()
    t = tm.begin(1, [Write("r1", Increment(1))])
    sim.run_until(1000)
    for _ in range(3):
        tm._on_decision(t, 2, "commit", t.states)
    sim.run_until(2000)
    assert store.value(2, "r1") == GCounter({1: 1})
    applied = [l for l in sim.trace if "node=2" in l and f"txn={t.id} commit applied" in l]
    assert len(applied) == 1


def test_abort_leaves_state_identical():
    sim, store, tm = make()
    store.local_update(0, "r1", Increment(0))
    before = store.replica_values("r1")
    sim.set_partition([[0, 1], [2]], at=0)
    t = tm.begin(1, [Write("r1", Increment(1))], deadline=100)
    sim.run_until(1000)
    assert t.state is TxnState.ABORTED
    assert store.replica_values("r1") == before


def test_decision_to_crashed_node_is_retried_after_recovery():
    sim, store, tm = make()
    # votes are in by t=60; COMMIT would reach node 2 at t=70
    sim.set_node_status(2, False, at=65)
    sim.set_node_status(2, True, at=300)
    t = tm.begin(1, [Write("r1", Increment(1))])
    sim.run_until(250)
    assert t.state is TxnState.COMMITTED and not t.finished
    sim.run_until(1000)
    assert t.finished
    assert tm.lock_tables()[2] == {}
    assert store.value(2, "r1") == GCounter({1: 1})


@pytest.mark.parametrize("n", [1, 3, 6])
def test_n_increments_yield_n(n):
    sim, store, tm = make()
    txns = [tm.begin(i % 3, [Write("r1", Increment(i % 3))]) for i in range(n)]
    sim.run_until(20_000)
    assert all(t.state is TxnState.COMMITTED for t in txns)
    assert {query(v) for v in store.replica_values("r1").values()} == {n}
