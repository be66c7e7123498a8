"""Per-node register replicas and the anti-entropy that keeps them in step."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import NodeDown, NotAReplica, UnboundRegister
from .lattice import Kind, LatticeValue, UpdateOp, bottom, leq, merge, query, render, render_op, update
from .simnet import NodeId, Simulator


@dataclass(frozen=True)
class Register:
    id: str
    kind: Kind
    primary: NodeId
    replicas: frozenset
    policy: object = None  # initial Policy; the live one is in the PolicyTable

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "replicas", frozenset(self.replicas))
        if self.primary not in self.replicas:
            raise ValueError(f"register {self.id}: primary {self.primary} is not a replica")


@dataclass
class ReplicaState:
    value: LatticeValue
    # peer -> time of last completed sync with it; absent means "since t=0"
    last_sync: dict = field(default_factory=dict)


@dataclass(frozen=True)
class UpdateRecord:
    reg: str
    node: NodeId
    time: int
    value: LatticeValue  # replica state right after the update


class Datastore:
    """All replicas of all registers, indexed by (node, register id).

    Every replica starts at bottom at t=0, which is also taken as the
    moment every replica was last in sync with the primary.
    """

    def __init__(self, sim: Simulator, registers: Iterable[Register]):
        self.sim = sim
        self.registers: dict[str, Register] = {}
        self._states: dict[tuple[NodeId, str], ReplicaState] = {}
        self.update_log: list[UpdateRecord] = []
        for reg in registers:
            if reg.id in self.registers:
                raise ValueError(f"duplicate register {reg.id}")
            bad = [n for n in reg.replicas if not 0 <= n < sim.n_nodes]
            if bad:
                raise ValueError(f"register {reg.id}: unknown replica node(s) {bad}")
            self.registers[reg.id] = reg
            for n in sorted(reg.replicas):
                self._states[(n, reg.id)] = ReplicaState(bottom(reg.kind))

    def register(self, reg_id: str) -> Register:
        try:
            return self.registers[reg_id]
        except KeyError:
            raise UnboundRegister(f"no register named {reg_id!r}") from None

    def state(self, node: NodeId, reg_id: str) -> ReplicaState:
        reg = self.register(reg_id)
        if node not in reg.replicas:
            raise NotAReplica(f"node {node} holds no replica of {reg_id}")
        return self._states[(node, reg_id)]

    def value(self, node: NodeId, reg_id: str) -> LatticeValue:
        return self.state(node, reg_id).value

    def replica_values(self, reg_id: str) -> dict[NodeId, LatticeValue]:
        reg = self.register(reg_id)
        return {n: self._states[(n, reg_id)].value for n in sorted(reg.replicas)}

    def shared_registers(self, a: NodeId, b: NodeId) -> list[str]:
        return [
            r.id for r in self.registers.values() if a in r.replicas and b in r.replicas
        ]

    def age(self, node: NodeId, reg_id: str, now: Optional[int] = None) -> int:
        """Time since this replica last synchronized with the primary."""
        reg = self.register(reg_id)
        st = self.state(node, reg_id)
        if node == reg.primary or len(reg.replicas) == 1:
            return 0
        now = self.sim.now if now is None else now
        return now - st.last_sync.get(reg.primary, 0)

    # -- transitions ------------------------------------------------------------

    def local_update(self, node: NodeId, reg_id: str, op: UpdateOp, now: Optional[int] = None) -> LatticeValue:
        st = self.state(node, reg_id)
        if not self.sim.is_up(node):
            raise NodeDown(f"node {node} is down")
        new = update(st.value, op)
        self._set(node, reg_id, new, cause=f"update {render_op(op)}")
        self.record_update(reg_id, node, new)
        return new

    def local_read(self, node: NodeId, reg_id: str, now: Optional[int] = None):
        """Observable value and staleness (ms) of the local replica."""
        st = self.state(node, reg_id)
        return query(st.value), self.age(node, reg_id, now)

    def merge_in(self, node: NodeId, reg_id: str, incoming: LatticeValue, *, peer: Optional[NodeId] = None, cause: str = "merge") -> LatticeValue:
        """Join ``incoming`` into the replica; optionally mark a sync with ``peer``."""
        st = self.state(node, reg_id)
        new = merge(st.value, incoming)
        if new != st.value:
            self._set(node, reg_id, new, cause=cause)
        if peer is not None:
            self.mark_synced(node, reg_id, peer)
        return new

    def mark_synced(self, node: NodeId, reg_id: str, peer: NodeId) -> None:
        st = self.state(node, reg_id)
        st.last_sync[peer] = max(st.last_sync.get(peer, 0), self.sim.now)

    def record_update(self, reg_id: str, node: NodeId, value: LatticeValue) -> None:
        self.update_log.append(UpdateRecord(reg_id, node, self.sim.now, value))

    def _set(self, node: NodeId, reg_id: str, new: LatticeValue, cause: str) -> None:
        st = self._states[(node, reg_id)]
        assert leq(st.value, new), "replica states only move up"
        st.value = new
        self.sim.note("state", node, f"reg={reg_id} cause={cause} value={render(new)}")

    def corrupt(self, node: NodeId, reg_id: str, value: LatticeValue) -> None:
        """Overwrite a replica without lattice checks. Negative controls only."""
        self._states[(node, reg_id)].value = value


@dataclass
class Session:
    a: NodeId
    b: NodeId
    regs: tuple
    started: int
    completed_at: Optional[int] = None


@dataclass
class Pull:
    node: NodeId
    reg: str
    source: NodeId
    started: int
    completed_at: Optional[int] = None
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class AntiEntropy:
    """Pairwise full-state exchange, periodic gossip and one-shot pulls.

    ``eligible(reg_id)`` decides whether a register takes part in
    background exchange at the current time (registers synchronized by
    transactions are kept out of it).
    """

    def __init__(self, sim: Simulator, store: Datastore, eligible: Callable[[str], bool] = lambda r: True):
        self.sim = sim
        self.store = store
        self.eligible = eligible
        self.sessions: list[Session] = []

    def _payload(self, node: NodeId, regs: Iterable[str]) -> dict:
        return {r: self.store.value(node, r) for r in regs}

    @staticmethod
    def _label(tag: str, payload: dict) -> str:
        return tag + " " + ";".join(f"{r}={render(v)}" for r, v in payload.items())

    def session(self, a: NodeId, b: NodeId, regs: Optional[Iterable[str]] = None) -> Session:
        """Push-pull exchange: a sends its states, b merges and answers with
        the joined states, a merges. Two messages per batch. Either side
        records the sync when it merges; the session completes at a."""
        if a == b:
            raise ValueError("anti-entropy needs two distinct nodes")
        if regs is None:
            regs = [r for r in self.store.shared_registers(a, b) if self.eligible(r)]
        regs = tuple(regs)
        s = Session(a, b, regs, self.sim.now)
        self.sessions.append(s)
        if not regs:
            return s
        offer = self._payload(a, regs)

        def at_b():
            live = [r for r in regs if self.eligible(r)]
            for r in live:
                self.store.merge_in(b, r, offer[r], peer=a, cause=f"sync from {a}")
            reply = self._payload(b, live)
            self.sim.send(b, a, self._label("SYNC-REPLY", reply), lambda: at_a(reply))

        def at_a(reply):
            for r, v in reply.items():
                if self.eligible(r):
                    self.store.merge_in(a, r, v, peer=b, cause=f"sync from {b}")
            s.completed_at = self.sim.now
            self.sim.note("sync", a, f"peer={b} regs={','.join(regs)} started={s.started}")

        self.sim.send(a, b, self._label("SYNC", offer), at_b)
        return s

    def start_gossip(self, period: int, until: int, first: Optional[int] = None) -> None:
        """Every ``period`` ms each up node runs one session with a peer
        drawn uniformly (simulator PRNG) from its reachable co-replicas."""
        if period <= 0:
            raise ValueError("gossip period must be > 0")
        t = period if first is None else first
        if t <= until:
            self.sim.timer(t, None, "gossip", lambda: self._tick(period, until))

    def _tick(self, period: int, until: int) -> None:
        for node in range(self.sim.n_nodes):
            if not self.sim.is_up(node):
                continue
            peers = [
                p for p in range(self.sim.n_nodes)
                if p != node
                and self.sim.reachable(node, p)
                and any(self.eligible(r) for r in self.store.shared_registers(node, p))
            ]
            if peers:
                self.session(node, self.sim.rng.choice(peers))
        nxt = self.sim.now + period
        if nxt <= until:
            self.sim.timer(nxt, None, "gossip", lambda: self._tick(period, until))

    def pull(self, node: NodeId, reg_id: str, on_done: Callable[[Pull], None], retry_ms: Optional[int] = None) -> Pull:
        """Fetch the primary's state of ``reg_id`` and merge it locally.

        With ``retry_ms`` the request is re-sent on that period until an
        answer arrives or the pull is cancelled.
        """
        reg = self.store.register(reg_id)
        p = Pull(node, reg_id, reg.primary, self.sim.now)

        def at_source():
            v = self.store.value(reg.primary, reg_id)
            self.sim.send(reg.primary, node, self._label("PULL-REPLY", {reg_id: v}), lambda: at_requester(v))

        def at_requester(v):
            if p.completed_at is not None:
                return
            self.store.merge_in(node, reg_id, v, peer=reg.primary, cause=f"refresh from {reg.primary}")
            p.completed_at = self.sim.now
            if not p.cancelled:
                on_done(p)

        def send():
            if p.completed_at is None and not p.cancelled:
                self.sim.send(node, reg.primary, f"PULL {reg_id}", at_source)
                if retry_ms:
                    self.sim.timer(self.sim.now + retry_ms, node, f"pull-retry {reg_id}", send)

        send()
        return p
