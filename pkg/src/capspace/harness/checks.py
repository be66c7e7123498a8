"""The three history checkers: convergence, serializability, staleness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional

from ..errors import CapError, TooLarge
from ..kernel import render_value
from ..lattice import Kind, LatticeValue, bottom, fold_merge, query, render, update
from ..policy import Spry, parse_policy
from ..txn import Read, TxnRecord

MAX_SERIAL_TXNS = 8


@dataclass(frozen=True)
class ConvergenceReport:
    ok: bool
    diffs: tuple = ()  # "reg=<r> node=<n> has <v>, oracle <w>"


def check_convergence(
    final: Mapping[str, Mapping[int, LatticeValue]],
    updates: Iterable[tuple],
    kinds: Mapping[str, Kind],
) -> ConvergenceReport:
    """Every replica must equal the fold-merge of all logged update states.

    Args:
        final: register -> node -> replica state at the end of the run.
        updates: (reg, ..., value) tuples; the value is the state produced by
            one update, so their join is the join of every issued delta.
        kinds: register -> lattice kind, for the bottom of untouched registers.
    """
    by_reg: dict = {}
    for u in updates:
        by_reg.setdefault(u[0], []).append(u[-1])
    diffs = []
    for reg in sorted(final):
        oracle = fold_merge(kinds[reg], by_reg.get(reg, []))
        for node, v in sorted(final[reg].items()):
            if v != oracle:
                diffs.append(f"reg={reg} node={node} has {render(v)}, oracle {render(oracle)}")
    return ConvergenceReport(not diffs, tuple(diffs))


@dataclass(frozen=True)
class SerialReport:
    ok: bool
    witness: tuple = ()  # txn ids in a serial order explaining the history
    reason: str = ""


def _same(observed: Any, value: Any) -> bool:
    obs = observed if isinstance(observed, str) else render_value(observed)
    return obs == render_value(value)


def check_serializable(
    txns: list,
    final: Mapping[str, LatticeValue],
    kinds: Mapping[str, Kind],
    initial: Optional[Mapping[str, LatticeValue]] = None,
) -> SerialReport:
    """Search for a serial order of committed transactions that explains
    every read and the final state of every register they touch.

    Depth-first over permutations, pruning a prefix as soon as one of its
    reads disagrees with the sequential state.

    Raises:
        TooLarge: more than ``MAX_SERIAL_TXNS`` transactions.
    """
    txns = list(txns)
    if len(txns) > MAX_SERIAL_TXNS:
        raise TooLarge(f"{len(txns)} transactions; the brute-force bound is {MAX_SERIAL_TXNS}")
    touched = sorted({op.reg for t in txns for op, _ in t.ops})
    start = {r: (initial or {}).get(r, bottom(kinds[r])) for r in touched}

    def run_one(state: dict, t: TxnRecord) -> Optional[dict]:
        state = dict(state)
        for op, observed in t.ops:
            if isinstance(op, Read):
                if not _same(observed, query(state[op.reg])):
                    return None
            else:
                state[op.reg] = update(state[op.reg], op.op)
        return state

    order: list = []
    used = [False] * len(txns)

    def dfs(state: dict) -> bool:
        if len(order) == len(txns):
            return all(state[r] == final[r] for r in touched if r in final)
        for i, t in enumerate(txns):
            if used[i]:
                continue
            nxt = run_one(state, t)
            if nxt is None:
                continue
            used[i] = True
            order.append(t.id)
            if dfs(nxt):
                return True
            used[i] = False
            order.pop()
        return False

    if dfs(start):
        return SerialReport(True, tuple(order))
    return SerialReport(False, (), f"no serial order of {len(txns)} transaction(s) explains the reads and final state")


@dataclass(frozen=True)
class Violation:
    op: int
    reg: str
    bound: str  # staleness | latency
    detail: str

    def render(self) -> str:
        return f"op={self.op} reg={self.reg} {self.bound}: {self.detail}"


def check_staleness(history: Iterable, policies: Optional[Mapping[str, Any]] = None) -> list[Violation]:
    """Audit every served read against the Spry bounds in force for it.

    The policy of each access is the one recorded in the history (the
    policy in force at invocation); ``policies`` (register -> Policy)
    overrides it per register. Non-Spry registers never violate.
    """
    out = []
    for h in history:
        for a in h.accesses:
            if a.kind != "read" or a.served_at is None:
                continue
            policy = (policies or {}).get(a.reg)
            if policy is None:
                try:
                    policy = parse_policy(a.policy)
                except CapError:
                    continue
            if not isinstance(policy, Spry):
                continue
            if policy.max_staleness is not None and a.age is not None and a.age > policy.max_staleness:
                out.append(Violation(h.op, a.reg, "staleness", f"served age {a.age} > {policy.max_staleness}"))
            if policy.latency_bound is not None and a.wait is not None and a.wait > policy.latency_bound:
                out.append(Violation(h.op, a.reg, "latency", f"waited {a.wait} > {policy.latency_bound}"))
    return out
