"""Strict two-phase locking plus two-phase commit over every replica.

Protocol, per transaction, driven by its coordinator node:

1. Locking. For each touched register in ascending id order, lock the
   register's primary replica first, then all other replicas in
   parallel. Writes take Exclusive locks, reads Shared. Each GRANT
   carries the participant's current replica state.
2. Prepare. PREPARE goes to every participant; each votes YES iff it is
   up and still holds the expected locks.
3. Decide. On unanimous YES the coordinator joins the granted states,
   runs the transaction's reads and writes against them in order, and
   broadcasts COMMIT with the resulting states; participants merge them
   and release. Any NO (or, in measured mode, the deadline) yields ABORT.

Outstanding messages of the current phase are re-sent every ``retry_ms``
until answered, so a transaction blocked by a partition or crash resumes
once the network allows it. Lock tables are volatile (lost on crash);
the set of decided transactions at each participant is durable.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Union

from .lattice import LatticeValue, UpdateOp, fold_merge, query, render, render_op, update
from .replica import Datastore
from .simnet import NodeId, Simulator

SHARED = "S"
EXCLUSIVE = "X"


@dataclass(frozen=True)
class Read:
    reg: str


@dataclass(frozen=True)
class Write:
    reg: str
    op: UpdateOp


TxnOp = Union[Read, Write]


# ---------------------------------------------------------------------------
# Locks


@dataclass
class _Lock:
    holders: dict = field(default_factory=dict)  # txn -> mode
    queue: deque = field(default_factory=deque)  # (txn, mode), FIFO


def _compatible(holders: dict, mode: str) -> bool:
    return not holders or (mode == SHARED and all(m == SHARED for m in holders.values()))


class LockTable:
    """Shared/exclusive locks at one node with FIFO waiting."""

    def __init__(self):
        self._locks: dict[str, _Lock] = {}

    def request(self, txn: str, reg: str, mode: str) -> bool:
        """Grant now (True) or queue (False). Re-requests are idempotent."""
        lk = self._locks.setdefault(reg, _Lock())
        if txn in lk.holders:
            return True
        if any(t == txn for t, _ in lk.queue):
            return False
        if not lk.queue and _compatible(lk.holders, mode):
            lk.holders[txn] = mode
            return True
        lk.queue.append((txn, mode))
        return False

    def release(self, txn: str) -> list[tuple[str, str, str]]:
        """Drop every lock and queued request of ``txn``.

        Returns the (txn, reg, mode) grants this unblocked.
        """
        granted = []
        for reg, lk in self._locks.items():
            touched = lk.holders.pop(txn, None) is not None
            if any(t == txn for t, _ in lk.queue):
                lk.queue = deque((t, m) for t, m in lk.queue if t != txn)
                touched = True
            if touched:
                while lk.queue and _compatible(lk.holders, lk.queue[0][1]):
                    t, m = lk.queue.popleft()
                    lk.holders[t] = m
                    granted.append((t, reg, m))
        return granted

    def holds(self, txn: str, reg: str, mode: str) -> bool:
        lk = self._locks.get(reg)
        return lk is not None and lk.holders.get(txn) == mode

    def clear(self) -> None:
        self._locks.clear()

    def snapshot(self) -> dict:
        return {
            reg: (dict(lk.holders), list(lk.queue))
            for reg, lk in sorted(self._locks.items())
            if lk.holders or lk.queue
        }


# ---------------------------------------------------------------------------
# Transactions


class TxnState(str, Enum):
    INIT = "init"
    LOCKING = "locking"
    PREPARING = "preparing"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass
class Txn:
    id: str
    coordinator: NodeId
    ops: tuple
    deadline: Optional[int] = None
    state: TxnState = TxnState.INIT
    started: Optional[int] = None
    decided_at: Optional[int] = None
    reason: Optional[str] = None
    modes: dict = field(default_factory=dict)  # reg -> S|X
    steps: list = field(default_factory=list)  # [[(node, reg), ...], ...]
    step: int = 0
    granted: dict = field(default_factory=dict)  # (node, reg) -> value
    votes: dict = field(default_factory=dict)
    acks: set = field(default_factory=set)
    participants: tuple = ()
    observed: list = field(default_factory=list)  # query() seen by each Read
    states: dict = field(default_factory=dict)  # reg -> committed state
    finished: bool = False
    last_sent: dict = field(default_factory=dict)  # message key -> time
    on_decided: Optional[Callable[["Txn"], None]] = field(default=None, repr=False)

    @property
    def decided(self) -> bool:
        return self.state in (TxnState.COMMITTED, TxnState.ABORTED)

    def expected_locks(self, node: NodeId, replicas: dict) -> list[tuple[str, str]]:
        return [(r, m) for r, m in sorted(self.modes.items()) if node in replicas[r]]


@dataclass(frozen=True)
class TxnRecord:
    """A committed transaction as seen by its coordinator."""

    id: str
    coordinator: NodeId
    ops: tuple  # (Read, observed) | (Write, None), in txn order
    committed_at: int


class Participant:
    """Participant side of the protocol at one node."""

    def __init__(self, node: NodeId, manager: "TxnManager"):
        self.node = node
        self.m = manager
        self.locks = LockTable()
        self.decided: dict[str, str] = {}  # durable: txn -> commit|abort

    @property
    def up(self) -> bool:
        return self.m.sim.is_up(self.node)

    def on_lock(self, txn: str, reg: str, mode: str) -> Optional[bool]:
        if txn in self.decided:
            return None
        return self.locks.request(txn, reg, mode)

    def on_prepare(self, txn: str, expected: Iterable[tuple[str, str]]) -> Optional[bool]:
        """YES iff up and holding every expected lock; None (silence) if down."""
        if not self.up:
            return None
        if txn in self.decided:
            return self.decided[txn] == "commit"
        vote = all(self.locks.holds(txn, reg, mode) for reg, mode in expected)
        self.m.sim.note("vote", self.node, f"txn={txn} vote={'yes' if vote else 'no'}")
        return vote

    def on_decision(self, txn: str, decision: str, states: dict) -> list:
        if txn not in self.decided:
            self.decided[txn] = decision
            if decision == "commit":
                for reg, v in states.items():
                    if self.node in self.m.store.register(reg).replicas:
                        self.m.store.merge_in(self.node, reg, v, cause=f"commit {txn}")
            self.m.sim.note("decision", self.node, f"txn={txn} {decision} applied")
        return self.locks.release(txn)


class TxnManager:
    """Coordinators and participants of every node.

    Args:
        retry_ms: re-send period for unanswered protocol messages.
    """

    def __init__(self, sim: Simulator, store: Datastore, retry_ms: int):
        self.sim = sim
        self.store = store
        self.retry_ms = max(1, retry_ms)
        self.participants = {n: Participant(n, self) for n in range(sim.n_nodes)}
        self.txns: dict[str, Txn] = {}
        self.committed: list[TxnRecord] = []
        self._ids = itertools.count(1)
        sim.on_status_change(self._status)

    def _status(self, node: NodeId, up: bool) -> None:
        if not up:
            self.participants[node].locks.clear()

    def _replicas(self) -> dict:
        return {r: reg.replicas for r, reg in self.store.registers.items()}

    # -- coordinator ------------------------------------------------------------

    def begin(
        self,
        coordinator: NodeId,
        ops: Iterable[TxnOp],
        on_decided: Optional[Callable[[Txn], None]] = None,
        deadline: Optional[int] = None,
    ) -> Txn:
        """Create a transaction and start ``begin_and_lock`` on it."""
        txn = Txn(f"T{next(self._ids)}", coordinator, tuple(ops), deadline, on_decided=on_decided)
        self.txns[txn.id] = txn
        self.begin_and_lock(txn)
        return txn

    def begin_and_lock(self, txn: Txn) -> list[list[tuple[NodeId, str]]]:
        if txn.state is not TxnState.INIT:
            raise ValueError(f"{txn.id} already started")
        for op in txn.ops:
            self.store.register(op.reg)
            if isinstance(op, Write):
                txn.modes[op.reg] = EXCLUSIVE
            else:
                txn.modes.setdefault(op.reg, SHARED)
        parts = set()
        for reg_id in sorted(txn.modes):
            reg = self.store.register(reg_id)
            txn.steps.append([(reg.primary, reg_id)])
            rest = [(n, reg_id) for n in sorted(reg.replicas - {reg.primary})]
            if rest:
                txn.steps.append(rest)
            parts |= reg.replicas
        txn.participants = tuple(sorted(parts))
        txn.state = TxnState.LOCKING
        txn.started = self.sim.now
        self.sim.note("txn", txn.coordinator, f"txn={txn.id} begin ops={_render_ops(txn.ops)}")
        if txn.deadline is not None:
            self.sim.timer(txn.deadline, txn.coordinator, f"txn-deadline {txn.id}", lambda: self._deadline(txn))
        self._send_step(txn)
        self.sim.timer(self.sim.now + self.retry_ms, txn.coordinator, f"txn-retry {txn.id}", lambda: self._retry(txn))
        return txn.steps

    def _due(self, txn: Txn, key: tuple, retrying: bool) -> bool:
        """Whether a (re)send of ``key`` is due; records the send time."""
        last = txn.last_sent.get(key)
        if retrying and last is not None and self.sim.now - last < self.retry_ms:
            return False
        txn.last_sent[key] = self.sim.now
        return True

    def _send_step(self, txn: Txn, retrying: bool = False) -> None:
        for node, reg in txn.steps[txn.step]:
            if (node, reg) not in txn.granted and self._due(txn, ("lock", node, reg), retrying):
                self._send_lock(txn, node, reg)

    def _send_lock(self, txn: Txn, node: NodeId, reg: str) -> None:
        mode = txn.modes[reg]
        self.sim.send(
            txn.coordinator, node, f"LOCK txn={txn.id} reg={reg} mode={mode}",
            lambda: self._on_lock(node, txn.id, reg, mode),
        )

    def _on_lock(self, node: NodeId, txn_id: str, reg: str, mode: str) -> None:
        if self.participants[node].on_lock(txn_id, reg, mode):
            self._send_grant(node, txn_id, reg)

    def _send_grant(self, node: NodeId, txn_id: str, reg: str) -> None:
        txn = self.txns[txn_id]
        value = self.store.value(node, reg)
        self.sim.send(
            node, txn.coordinator, f"GRANT txn={txn_id} reg={reg} value={render(value)}",
            lambda: self._on_grant(txn, node, reg, value),
        )

    def _on_grant(self, txn: Txn, node: NodeId, reg: str, value: LatticeValue) -> None:
        if txn.state is not TxnState.LOCKING or (node, reg) not in txn.steps[txn.step]:
            return
        txn.granted[(node, reg)] = value
        if all(k in txn.granted for k in txn.steps[txn.step]):
            txn.step += 1
            if txn.step < len(txn.steps):
                self._send_step(txn)
            else:
                txn.state = TxnState.PREPARING
                self._send_prepares(txn)

    def _send_prepares(self, txn: Txn, retrying: bool = False) -> None:
        for node in txn.participants:
            if node not in txn.votes and self._due(txn, ("prepare", node), retrying):
                self._send_prepare(txn, node)

    def _send_prepare(self, txn: Txn, node: NodeId) -> None:
        expected = txn.expected_locks(node, self._replicas())
        locks = ",".join(f"{r}:{m}" for r, m in expected)
        self.sim.send(
            txn.coordinator, node, f"PREPARE txn={txn.id} locks={locks}",
            lambda: self._on_prepare(txn, node, expected),
        )

    def _on_prepare(self, txn: Txn, node: NodeId, expected) -> None:
        vote = self.participants[node].on_prepare(txn.id, expected)
        if vote is None:
            return
        self.sim.send(
            node, txn.coordinator, f"VOTE txn={txn.id} vote={'yes' if vote else 'no'}",
            lambda: self._on_vote(txn, node, vote),
        )

    def _on_vote(self, txn: Txn, node: NodeId, vote: bool) -> None:
        if txn.state is not TxnState.PREPARING:
            return
        txn.votes[node] = vote
        if not vote:
            self._abort(txn, f"participant {node} voted no")
        elif all(txn.votes.get(n) for n in txn.participants):
            self._commit(txn)

    def two_phase_commit(self, txn: Txn) -> TxnState:
        """Current outcome of the commit protocol for ``txn``.

        The protocol itself runs inside simulator events; this reports
        Committed/Aborted once decided, else the phase it is blocked in.
        """
        return txn.state

    def _commit(self, txn: Txn) -> None:
        by_reg: dict = {}
        for (node, reg), v in sorted(txn.granted.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            by_reg.setdefault(reg, []).append(v)
        current = {reg: fold_merge(self.store.register(reg).kind, vs) for reg, vs in by_reg.items()}
        for op in txn.ops:
            if isinstance(op, Read):
                txn.observed.append(query(current[op.reg]))
            else:
                current[op.reg] = update(current[op.reg], op.op)
        txn.states = current
        txn.state = TxnState.COMMITTED
        txn.decided_at = self.sim.now
        for op in txn.ops:
            if isinstance(op, Write):
                self.store.record_update(op.reg, txn.coordinator, current[op.reg])
        obs = iter(txn.observed)
        self.committed.append(
            TxnRecord(
                txn.id, txn.coordinator,
                tuple((op, next(obs) if isinstance(op, Read) else None) for op in txn.ops),
                self.sim.now,
            )
        )
        self.sim.note("txn", txn.coordinator, f"txn={txn.id} commit")
        self._send_decisions(txn)
        if txn.on_decided:
            txn.on_decided(txn)

    def _abort(self, txn: Txn, reason: str) -> None:
        txn.state = TxnState.ABORTED
        txn.reason = reason
        txn.decided_at = self.sim.now
        self.sim.note("txn", txn.coordinator, f"txn={txn.id} abort reason={reason}")
        self._send_decisions(txn)
        if txn.on_decided:
            txn.on_decided(txn)

    def _deadline(self, txn: Txn) -> None:
        if not txn.decided:
            self._abort(txn, "deadline")

    def _send_decisions(self, txn: Txn, retrying: bool = False) -> None:
        decision = "commit" if txn.state is TxnState.COMMITTED else "abort"
        for node in txn.participants:
            if node not in txn.acks and self._due(txn, ("decision", node), retrying):
                self._send_decision(txn, node, decision)

    def _send_decision(self, txn: Txn, node: NodeId, decision: str) -> None:
        states = txn.states if decision == "commit" else {}
        body = ";".join(f"{r}={render(v)}" for r, v in sorted(states.items()))
        label = f"{decision.upper()} txn={txn.id}" + (f" states={body}" if body else "")
        self.sim.send(txn.coordinator, node, label, lambda: self._on_decision(txn, node, decision, states))

    def _on_decision(self, txn: Txn, node: NodeId, decision: str, states: dict) -> None:
        for t, reg, _mode in self.participants[node].on_decision(txn.id, decision, states):
            self._send_grant(node, t, reg)
        self.sim.send(node, txn.coordinator, f"ACK txn={txn.id}", lambda: self._on_ack(txn, node))

    def _on_ack(self, txn: Txn, node: NodeId) -> None:
        txn.acks.add(node)
        if not txn.finished and all(n in txn.acks for n in txn.participants):
            txn.finished = True
            self.sim.note("txn", txn.coordinator, f"txn={txn.id} finished")

    def _retry(self, txn: Txn) -> None:
        if txn.finished:
            return
        if txn.state is TxnState.LOCKING:
            self._send_step(txn, retrying=True)
        elif txn.state is TxnState.PREPARING:
            self._send_prepares(txn, retrying=True)
        else:
            self._send_decisions(txn, retrying=True)
        self.sim.timer(self.sim.now + self.retry_ms, txn.coordinator, f"txn-retry {txn.id}", lambda: self._retry(txn))

    # -- inspection -------------------------------------------------------------

    def lock_tables(self) -> dict:
        return {n: p.locks.snapshot() for n, p in self.participants.items()}


def _render_ops(ops: Iterable[TxnOp]) -> str:
    return ",".join(
        f"read({op.reg})" if isinstance(op, Read) else f"write({op.reg},{render_op(op.op)})"
        for op in ops
    )
