"""The shared runtime: evaluations, policy interposition, replication.

A :class:`Runtime` owns one simulator, the datastore, the policy table,
the anti-entropy layer and the transaction manager. Programs submitted
to it run as :class:`kernel.Evaluation` objects; every register access
suspends the evaluation, asks :meth:`Runtime.interpose` for a plan, and
resumes when that plan's condition fires inside the simulator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Optional

from . import kernel
from .errors import CapError, NodeDown, NotAReplica, StalenessUnsatisfiable, TxnAborted
from .kernel import Access, Evaluation, Expr, render_expr, render_value
from .lattice import Add, Assign, Decrement, Increment, Remove, UpdateOp, query
from .policy import (
    Austere,
    Lasp,
    PolicyTable,
    Refresh,
    ResumeAfter,
    ResumeAtDeadline,
    ResumeNow,
    ResumePlan,
    Transaction,
    decide_on_deref,
    decide_on_store,
)
from .replica import AntiEntropy, Datastore
from .simnet import LinkModel, NodeId, Simulator
from .txn import TxnManager, TxnState


@dataclass
class AccessRecord:
    reg: str
    kind: str  # read | write
    policy: str
    requested_at: int
    served_at: Optional[int] = None
    age: Optional[int] = None  # staleness of the value served (reads)
    source: str = ""  # local | refresh | fallback | txn

    @property
    def wait(self) -> Optional[int]:
        return None if self.served_at is None else self.served_at - self.requested_at


@dataclass
class OpRecord:
    id: int
    node: NodeId
    program: Expr
    invoked: int
    deadline: Optional[int] = None
    status: str = "pending"  # pending | completed | failed
    value: Any = None
    finished_at: Optional[int] = None
    error: Optional[str] = None
    accesses: list = field(default_factory=list)
    waiting_on: Optional[str] = None
    waiting_since: Optional[int] = None
    ev: Optional[Evaluation] = field(default=None, repr=False)

    @property
    def finished(self) -> bool:
        return self.status != "pending"

    @property
    def text(self) -> str:
        return render_expr(self.program)

    def outcome(self) -> kernel.Outcome:
        if self.status == "completed":
            return kernel.Completed(self.value, self.finished_at)
        if self.status == "failed":
            return kernel.Failed(self.error)
        if self.waiting_on is not None:
            return kernel.Blocked(self.waiting_on, self.waiting_since)
        return kernel.Blocked("not started", self.invoked)


def _retry_period(sim: Simulator) -> int:
    return 2 * sim.link.max_latency + 1


class Runtime:
    def __init__(self, sim: Simulator, store: Datastore, policies: PolicyTable, retry_ms: Optional[int] = None):
        self.sim = sim
        self.store = store
        self.policies = policies
        self.retry_ms = retry_ms if retry_ms is not None else _retry_period(sim)
        self.txns = TxnManager(sim, store, self.retry_ms)
        self.anti_entropy = AntiEntropy(sim, store, eligible=self._gossip_eligible)
        self.ops: list[OpRecord] = []
        self._ids = itertools.count(1)

    def _gossip_eligible(self, reg: str) -> bool:
        return not isinstance(self.policies.policy_at(reg, self.sim.now), Austere)

    # -- workload -------------------------------------------------------------

    def submit(self, program: Expr, node: NodeId, at: int, deadline: Optional[int] = None) -> OpRecord:
        op = OpRecord(next(self._ids), node, program, at, deadline)
        self.ops.append(op)
        self.sim.schedule(at, "workload", node, f"op={op.id} program={op.text}", lambda: self._start(op))
        return op

    def reconfigure(self, reg: str, policy, at: int) -> None:
        self.store.register(reg)
        self.policies.reconfigure(reg, policy, at)
        self.sim.schedule(at, "fault", None, f"reconfigure {reg} {policy.render()}")

    def _start(self, op: OpRecord) -> None:
        if not self.sim.is_up(op.node):
            self._fail(op, NodeDown(f"node {op.node} is down"))
            return
        op.ev = Evaluation(op.program)
        self._drive(op, op.ev.start)

    def _drive(self, op: OpRecord, step) -> None:
        """Run the evaluation until it finishes or must wait on the network."""
        try:
            access = step()
            while access is not None:
                plan = self.interpose(access, op.node, self.sim.now)
                if not isinstance(plan, ResumeNow):
                    self._suspend(op, access, plan)
                    return
                value = self._serve_local(op, access, "local")
                access = op.ev.resume(value)
        except CapError as e:
            self._fail(op, e)
            return
        op.status = "completed"
        op.value = op.ev.value
        op.finished_at = self.sim.now
        op.waiting_on = None
        self.sim.note(
            "complete", op.node,
            f"op={op.id} value={render_value(op.value)} latency={op.finished_at - op.invoked}",
        )

    def _fail(self, op: OpRecord, err: Exception) -> None:
        op.status = "failed"
        op.error = f"{type(err).__name__}: {err}"
        op.finished_at = self.sim.now
        op.waiting_on = None
        self.sim.note("fail", op.node, f"op={op.id} error={op.error}")

    # -- interposition ----------------------------------------------------------

    def update_op(self, access: Access, node: NodeId, now: int) -> UpdateOp:
        if access.op == "inc":
            return Increment(node)
        if access.op == "dec":
            return Decrement(node)
        if access.op == "add":
            return Add(access.arg, node)
        if access.op == "remove":
            return Remove(access.arg)
        return Assign(access.arg, now, node)

    def interpose(self, access: Access, node: NodeId, now: int) -> ResumePlan:
        """The policy's plan for one Deref/Store site. Never raises for
        policy reasons; errors surface when the plan is carried out."""
        reg = self.store.register(access.reg)
        policy = self.policies.policy_at(access.reg, now)
        if access.kind == "write":
            return decide_on_store(policy, access.reg, self.update_op(access, node, now), now=now)
        replica = node in reg.replicas
        age = self.store.age(node, access.reg, now) if replica else 0
        return decide_on_deref(policy, access.reg, is_primary=node == reg.primary, age=age, now=now)

    def _record(self, op: OpRecord, access: Access, requested_at: int) -> AccessRecord:
        rec = AccessRecord(
            access.reg, access.kind,
            self.policies.policy_at(access.reg, requested_at).render(), requested_at,
        )
        op.accesses.append(rec)
        return rec

    def _serve_local(self, op: OpRecord, access: Access, source: str, rec: Optional[AccessRecord] = None) -> Any:
        now = self.sim.now
        rec = rec or self._record(op, access, now)
        if access.kind == "read":
            value, age = self.store.local_read(op.node, access.reg, now)
            rec.age = age
        else:
            new = self.store.local_update(op.node, access.reg, self.update_op(access, op.node, rec.requested_at), now)
            value = query(new)
        rec.served_at = now
        rec.source = source
        return value

    def _suspend(self, op: OpRecord, access: Access, plan: ResumePlan) -> None:
        now = self.sim.now
        rec = self._record(op, access, now)
        op.waiting_since = now
        reg = access.reg

        def resume(value):
            op.waiting_on = None
            self._drive(op, lambda: op.ev.resume(value))

        def fail(err):
            self._fail(op, err)

        if isinstance(plan, ResumeAfter) and isinstance(plan.sync, Transaction):
            op.waiting_on = f"txn on {reg}"

            def decided(txn):
                if txn.state is TxnState.ABORTED:
                    fail(TxnAborted(f"{txn.id}: {txn.reason}"))
                    return
                rec.served_at = self.sim.now
                rec.source = "txn"
                if access.kind == "read":
                    rec.age = 0
                    resume(txn.observed[0])
                else:
                    resume(query(txn.states[reg]))

            txn = self.txns.begin(op.node, plan.sync.ops, decided, plan.sync.deadline)
            op.waiting_on = f"{txn.id} on {reg}"
            return

        if op.node not in self.store.register(reg).replicas:
            fail(NotAReplica(f"node {op.node} holds no replica of {reg}"))
            return

        if isinstance(plan, ResumeAfter):
            assert isinstance(plan.sync, Refresh)
            op.waiting_on = f"refresh of {reg}"
            self.anti_entropy.pull(
                op.node, reg,
                lambda _p: self._resume_with(op, access, rec, "refresh", resume, fail),
                retry_ms=self.retry_ms if plan.sync.retry else None,
            )
            return

        assert isinstance(plan, ResumeAtDeadline)
        op.waiting_on = f"refresh of {reg} until {plan.deadline}"
        state = {"done": False}

        def fresh(_p):
            if not state["done"]:
                state["done"] = True
                self._resume_with(op, access, rec, "refresh", resume, fail)

        pull = self.anti_entropy.pull(op.node, reg, fresh)

        def at_deadline(second_pass=False):
            if state["done"]:
                return
            if not second_pass:
                # let replies delivered at exactly the deadline win
                self.sim.timer(self.sim.now, op.node, f"deadline {reg} op={op.id}", lambda: at_deadline(True))
                return
            state["done"] = True
            pull.cancel()
            age = self.store.age(op.node, reg)
            if plan.max_staleness is not None and age > plan.max_staleness:
                fail(StalenessUnsatisfiable(f"{reg}: cached copy is {age} ms old > {plan.max_staleness}"))
                return
            self._resume_with(op, access, rec, "fallback", resume, fail)

        self.sim.timer(plan.deadline, op.node, f"deadline {reg} op={op.id}", at_deadline)

    def _resume_with(self, op, access, rec, source, resume, fail) -> None:
        try:
            value = self._serve_local(op, access, source, rec)
        except CapError as e:
            fail(e)
            return
        resume(value)

    # -- running ----------------------------------------------------------------

    def run(self, until: int) -> int:
        return self.sim.run_until(until)


def build_runtime(
    n_nodes: int,
    registers,
    link=None,
    seed: int = 0,
    retry_ms: Optional[int] = None,
) -> Runtime:
    """Convenience constructor used by tests and the gallery scripts."""
    sim = Simulator(n_nodes, link or LinkModel(), seed)
    store = Datastore(sim, registers)
    table = PolicyTable()
    for reg in store.registers.values():
        table.declare(reg.id, reg.policy or Lasp())
    return Runtime(sim, store, table, retry_ms)
