"""Run a scenario to its horizon and record History, Metrics and trace.

Output files (all text, written by :func:`write_outputs`):

``trace.txt``
    One simulator event per line: ``t= seq= kind= node= detail=``.
``history.tsv``
    One row per workload op. Columns, in order: ``op node invoked
    deadline status value finished latency available accesses program``.
    ``-`` marks an absent field. ``accesses`` lists the op's register
    accesses separated by `` ; ``, each as ``<read|write> <reg> age=<ms>
    wait=<ms> src=<source> policy=<policy>``.
``metrics.tsv``
    ``metric<TAB>value`` rows in a fixed order (see :data:`METRIC_ORDER`),
    then ``max_age[<reg>]`` and ``convergence_ms[<reg>]`` per register.
``states.jsonl``
    ``{"type": "final", ...}`` per register with every replica state,
    then ``{"type": "update", ...}`` per logged update.
``txns.jsonl``
    One committed transaction per line, in commit order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..kernel import render_value
from ..lattice import (
    Add,
    Assign,
    Decrement,
    Increment,
    Kind,
    Remove,
    UpdateOp,
    bottom,
    from_json,
    render,
    to_json,
)
from ..policy import PolicyTable
from ..replica import Datastore
from ..runtime import AccessRecord, Runtime
from ..simnet import Simulator
from ..txn import Read, TxnRecord, Write
from .scenario import Scenario

HISTORY_COLUMNS = (
    "op", "node", "invoked", "deadline", "status", "value",
    "finished", "latency", "available", "accesses", "program",
)
METRIC_ORDER = (
    "ops", "available", "availability", "latency_mean", "latency_max",
    "messages", "convergence_ms",
)


@dataclass(frozen=True)
class HistoryEntry:
    op: int
    node: int
    invoked: int
    deadline: Optional[int]
    status: str  # completed | failed | blocked
    value: str  # rendered result, or the error for failed ops
    finished: Optional[int]
    accesses: tuple  # AccessRecord, in program order
    program: str

    @property
    def latency(self) -> Optional[int]:
        return None if self.finished is None or self.status != "completed" else self.finished - self.invoked

    @property
    def available(self) -> bool:
        """Completed, and within the op's deadline if it has one."""
        if self.status != "completed":
            return False
        return self.deadline is None or self.latency <= self.deadline


@dataclass(frozen=True)
class Metrics:
    ops: int
    available: int
    latency_mean: Optional[float]
    latency_max: Optional[int]
    messages: int
    max_age: dict  # reg -> ms, over served reads (absent: no reads)
    convergence: dict  # reg -> ms from last update to replica equality, None if never

    @property
    def availability(self) -> float:
        return 1.0 if self.ops == 0 else self.available / self.ops

    @property
    def convergence_ms(self) -> Optional[int]:
        vals = list(self.convergence.values())
        if any(v is None for v in vals):
            return None
        return max(vals, default=0)

    def rows(self) -> list[tuple[str, str]]:
        def fmt(v):
            if v is None:
                return "-"
            if isinstance(v, float):
                return f"{v:.6f}"
            return str(v)

        rows = [(k, fmt(getattr(self, k))) for k in METRIC_ORDER]
        rows += [(f"max_age[{r}]", fmt(v)) for r, v in sorted(self.max_age.items())]
        rows += [(f"convergence_ms[{r}]", fmt(v)) for r, v in sorted(self.convergence.items())]
        return rows


@dataclass
class RunResult:
    scenario: Scenario
    history: list
    metrics: Metrics
    trace: list
    runtime: Runtime = field(repr=False)

    @property
    def store(self) -> Datastore:
        return self.runtime.store

    @property
    def txns(self) -> list:
        return self.runtime.txns.committed


# ---------------------------------------------------------------------------
# Running


def build(scenario: Scenario, seed: Optional[int] = None) -> Runtime:
    """A runtime with the scenario's workload, faults and gossip scheduled."""
    sim = Simulator(scenario.n_nodes, scenario.link, scenario.seed if seed is None else seed)
    store = Datastore(sim, scenario.registers)
    table = PolicyTable()
    for r in scenario.registers:
        table.declare(r.id, r.policy)
    rt = Runtime(sim, store, table)
    for f in scenario.faults:
        if f.kind == "partition":
            sim.set_partition(f.groups, at=f.time)
        elif f.kind == "heal":
            sim.heal(at=f.time)
        elif f.kind in ("crash", "recover"):
            sim.set_node_status(f.node, f.kind == "recover", at=f.time)
        else:
            rt.reconfigure(f.reg, f.policy, at=f.time)
    if scenario.gossip is not None:
        rt.anti_entropy.start_gossip(scenario.gossip, until=scenario.horizon)
    for w in scenario.workload:
        rt.submit(w.program, w.node, w.time, w.deadline)
    return rt


def run(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    """Execute ``scenario`` deterministically up to its horizon."""
    rt = build(scenario, seed)
    rt.run(scenario.horizon)
    history = [
        HistoryEntry(
            op=o.id,
            node=o.node,
            invoked=o.invoked,
            deadline=o.deadline,
            status=o.status if o.finished else "blocked",
            value=(render_value(o.value) if o.status == "completed" else o.error or "-"),
            finished=o.finished_at,
            accesses=tuple(o.accesses),
            program=o.text,
        )
        for o in rt.ops
    ]
    metrics = compute_metrics(history, rt.sim.trace, rt.store, rt.sim.messages_sent)
    return RunResult(scenario, history, metrics, list(rt.sim.trace), rt)


# ---------------------------------------------------------------------------
# Metrics

_STATE = re.compile(r"t=(\d+) seq=\d+ kind=state node=(\d+) detail=reg=(\S+) cause=.* value=(\S+)\Z")


def convergence_times(trace: list, registers: dict, update_times: dict) -> dict:
    """Per register: ms from its last update until all replicas were equal
    (and stayed so), read off the trace's state lines. None if they never
    became equal; 0 for registers never updated."""
    current = {
        r: {n: render(bottom(reg.kind)) for n in reg.replicas} for r, reg in registers.items()
    }
    equal_since = {r: 0 for r in registers}
    for line in trace:
        m = _STATE.match(line)
        if not m:
            continue
        t, node, reg, value = int(m.group(1)), int(m.group(2)), m.group(3), m.group(4)
        was_equal = len(set(current[reg].values())) == 1
        current[reg][node] = value
        now_equal = len(set(current[reg].values())) == 1
        if now_equal and not was_equal:
            equal_since[reg] = t
        elif not now_equal:
            equal_since[reg] = None
    out = {}
    for r in registers:
        last = update_times.get(r)
        if last is None:
            out[r] = 0
        elif equal_since[r] is None:
            out[r] = None
        else:
            out[r] = max(0, equal_since[r] - last)
    return out


def compute_metrics(history: list, trace: list, store: Datastore, messages: int) -> Metrics:
    done = [h.latency for h in history if h.status == "completed"]
    ages: dict = {}
    for h in history:
        for a in h.accesses:
            if a.kind == "read" and a.age is not None:
                ages[a.reg] = max(ages.get(a.reg, 0), a.age)
    last_update: dict = {}
    for u in store.update_log:
        last_update[u.reg] = max(last_update.get(u.reg, 0), u.time)
    return Metrics(
        ops=len(history),
        available=sum(h.available for h in history),
        latency_mean=(sum(done) / len(done)) if done else None,
        latency_max=max(done) if done else None,
        messages=messages,
        max_age=ages,
        convergence=convergence_times(trace, store.registers, last_update),
    )


def availability_from_history(history: list) -> float:
    """Independent recomputation: 1 - unavailable/total."""
    if not history:
        return 1.0
    bad = 0
    for h in history:
        ok = h.status == "completed" and (
            h.deadline is None or h.finished - h.invoked <= h.deadline
        )
        bad += not ok
    return 1 - bad / len(history)


# ---------------------------------------------------------------------------
# Serialization


def op_to_json(op: UpdateOp) -> dict:
    if isinstance(op, Increment):
        return {"op": "inc", "actor": op.actor}
    if isinstance(op, Decrement):
        return {"op": "dec", "actor": op.actor}
    if isinstance(op, Add):
        return {"op": "add", "element": op.element, "actor": op.actor}
    if isinstance(op, Remove):
        return {"op": "remove", "element": op.element}
    return {"op": "assign", "element": op.element, "timestamp": op.timestamp, "actor": op.actor}


def op_from_json(d: dict) -> UpdateOp:
    kind = d["op"]
    if kind == "inc":
        return Increment(d["actor"])
    if kind == "dec":
        return Decrement(d["actor"])
    if kind == "add":
        return Add(d["element"], d.get("actor"))
    if kind == "remove":
        return Remove(d["element"])
    if kind == "assign":
        return Assign(d["element"], d["timestamp"], d["actor"])
    raise ValueError(f"unknown op {kind!r}")


def _opt(v) -> str:
    return "-" if v is None else str(v)


def _render_access(a: AccessRecord) -> str:
    return (
        f"{a.kind} {a.reg} age={_opt(a.age)} wait={_opt(a.wait)} "
        f"src={a.source or '-'} policy={a.policy}"
    )


_ACCESS = re.compile(r"(read|write) (\S+) age=(\S+) wait=(\S+) src=(\S+) policy=(.+)\Z")


def _parse_access(text: str) -> AccessRecord:
    m = _ACCESS.match(text.strip())
    if not m:
        raise ValueError(f"bad access record {text!r}")
    kind, reg, age, wait, src, policy = m.groups()
    opt = lambda s: None if s == "-" else int(s)  # noqa: E731
    # requested_at is not stored; wait is reconstructed relative to 0
    rec = AccessRecord(reg, kind, policy, 0, opt(wait), opt(age), "" if src == "-" else src)
    return rec


def history_lines(history: list) -> list[str]:
    out = ["\t".join(HISTORY_COLUMNS)]
    for h in history:
        acc = " ; ".join(_render_access(a) for a in h.accesses) or "-"
        out.append("\t".join([
            str(h.op), str(h.node), str(h.invoked), _opt(h.deadline), h.status, h.value,
            _opt(h.finished), _opt(h.latency), "1" if h.available else "0", acc, h.program,
        ]))
    return out


def read_history(path: str | Path) -> list[HistoryEntry]:
    """Parse a ``history.tsv`` back into entries."""
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != HISTORY_COLUMNS:
        raise ValueError(f"{path}: not a history file (header mismatch)")
    out = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != len(HISTORY_COLUMNS):
            raise ValueError(f"{path}:{ln}: expected {len(HISTORY_COLUMNS)} columns, got {len(cols)}")
        row = dict(zip(HISTORY_COLUMNS, cols))
        opt = lambda s: None if s == "-" else int(s)  # noqa: E731
        accesses = () if row["accesses"] == "-" else tuple(
            _parse_access(a) for a in row["accesses"].split(" ; ")
        )
        out.append(HistoryEntry(
            op=int(row["op"]), node=int(row["node"]), invoked=int(row["invoked"]),
            deadline=opt(row["deadline"]), status=row["status"], value=row["value"],
            finished=opt(row["finished"]), accesses=accesses, program=row["program"],
        ))
    return out


def txn_to_json(t: TxnRecord) -> dict:
    ops = []
    for op, observed in t.ops:
        if isinstance(op, Read):
            ops.append({"read": op.reg, "observed": render_value(observed)})
        else:
            ops.append({"write": op.reg, "op": op_to_json(op.op)})
    return {"id": t.id, "coordinator": t.coordinator, "committed_at": t.committed_at, "ops": ops}


def txn_from_json(d: dict) -> TxnRecord:
    ops = []
    for o in d["ops"]:
        if "read" in o:
            ops.append((Read(o["read"]), o["observed"]))
        else:
            ops.append((Write(o["write"], op_from_json(o["op"])), None))
    return TxnRecord(d["id"], d["coordinator"], tuple(ops), d["committed_at"])


def states_records(store: Datastore) -> list[dict]:
    out = []
    for r, reg in sorted(store.registers.items()):
        out.append({
            "type": "final", "reg": r, "kind": reg.kind.value, "primary": reg.primary,
            "replicas": {str(n): to_json(v) for n, v in store.replica_values(r).items()},
        })
    for u in store.update_log:
        out.append({"type": "update", "reg": u.reg, "node": u.node, "time": u.time, "value": to_json(u.value)})
    return out


@dataclass(frozen=True)
class StateDump:
    kinds: dict  # reg -> Kind
    primaries: dict  # reg -> node
    final: dict  # reg -> {node: LatticeValue}
    updates: list  # (reg, node, time, LatticeValue)


def parse_states(records: list[dict]) -> StateDump:
    kinds, prim, final, updates = {}, {}, {}, []
    for d in records:
        if d["type"] == "final":
            kinds[d["reg"]] = Kind(d["kind"])
            prim[d["reg"]] = d["primary"]
            final[d["reg"]] = {int(n): from_json(v) for n, v in d["replicas"].items()}
        else:
            updates.append((d["reg"], d["node"], d["time"], from_json(d["value"])))
    return StateDump(kinds, prim, final, updates)


def dump_states(store: Datastore) -> StateDump:
    return parse_states(states_records(store))


def _jsonl(records: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_outputs(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.txt").write_text("".join(line + "\n" for line in result.trace))
    (out / "history.tsv").write_text("\n".join(history_lines(result.history)) + "\n")
    (out / "metrics.tsv").write_text(
        "metric\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in result.metrics.rows())
    )
    (out / "states.jsonl").write_text(_jsonl(states_records(result.store)))
    (out / "txns.jsonl").write_text(_jsonl([txn_to_json(t) for t in result.txns]))
    return out


def read_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
