"""Consistency policies and the resume plans they produce.

A policy never waits or talks to the network itself. Given the access
and the local replica's staleness it returns a plan saying how the
suspended evaluation may continue; the runtime carries the plan out.

Policy grammar (scenario files)::

    lasp
    austere [mode=pure]
    austere mode=measured deadline=<ms>
    spry staleness=<ms> latency=<ms>      (either field may be omitted)
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import InvalidPolicy
from .txn import Read, Write

# ---------------------------------------------------------------------------
# Policies


@dataclass(frozen=True)
class Lasp:
    def render(self) -> str:
        return "lasp"


@dataclass(frozen=True)
class Austere:
    mode: str = "pure"
    deadline: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("pure", "measured"):
            raise InvalidPolicy(f"austere mode must be pure or measured, not {self.mode!r}")
        if self.mode == "measured" and (self.deadline is None or self.deadline <= 0):
            raise InvalidPolicy("measured austere needs a deadline > 0")
        if self.mode == "pure" and self.deadline is not None:
            raise InvalidPolicy("pure austere never gives up; drop the deadline")

    def render(self) -> str:
        if self.mode == "pure":
            return "austere mode=pure"
        return f"austere mode=measured deadline={self.deadline}"


@dataclass(frozen=True)
class Spry:
    max_staleness: Optional[int] = None
    latency_bound: Optional[int] = None

    def __post_init__(self):
        if self.max_staleness is None and self.latency_bound is None:
            raise InvalidPolicy("spry needs a staleness bound, a latency bound, or both")
        for name, b in (("staleness", self.max_staleness), ("latency", self.latency_bound)):
            if b is not None and b <= 0:
                raise InvalidPolicy(f"spry {name} bound must be > 0")

    def render(self) -> str:
        parts = ["spry"]
        if self.max_staleness is not None:
            parts.append(f"staleness={self.max_staleness}")
        if self.latency_bound is not None:
            parts.append(f"latency={self.latency_bound}")
        return " ".join(parts)


Policy = Union[Lasp, Austere, Spry]


def parse_policy(text: str) -> Policy:
    words = text.split()
    if not words:
        raise InvalidPolicy("empty policy")
    name, fields = words[0], {}
    for w in words[1:]:
        key, eq, val = w.partition("=")
        if not eq or key in fields:
            raise InvalidPolicy(f"bad policy field {w!r}")
        fields[key] = val

    def ms(key):
        try:
            return int(fields.pop(key))
        except ValueError:
            raise InvalidPolicy(f"{key} must be an integer number of ms") from None

    if name == "lasp":
        policy: Policy = Lasp()
    elif name == "austere":
        mode = fields.pop("mode", "pure")
        deadline = ms("deadline") if "deadline" in fields else None
        policy = Austere(mode, deadline)
    elif name == "spry":
        s = ms("staleness") if "staleness" in fields else None
        lat = ms("latency") if "latency" in fields else None
        policy = Spry(s, lat)
    else:
        raise InvalidPolicy(f"unknown policy {name!r}")
    if fields:
        raise InvalidPolicy(f"unexpected field(s) {sorted(fields)} for {name}")
    return policy


# ---------------------------------------------------------------------------
# Plans


@dataclass(frozen=True)
class Refresh:
    """Pull the register's state from its primary and merge it locally."""

    reg: str
    retry: bool = False


@dataclass(frozen=True)
class Transaction:
    """Run the access as a 2PL + 2PC transaction over every replica."""

    ops: tuple = ()  # Read / Write, in order
    deadline: Optional[int] = None  # measured mode: abort at this absolute time


@dataclass(frozen=True)
class ResumeNow:
    source: str = "local"


@dataclass(frozen=True)
class ResumeAfter:
    sync: Union[Refresh, Transaction]


@dataclass(frozen=True)
class ResumeAtDeadline:
    deadline: int
    sync: Refresh
    max_staleness: Optional[int] = None  # gate on the fallback, if any
    fallback: str = "local"


ResumePlan = Union[ResumeNow, ResumeAfter, ResumeAtDeadline]


def _txn_deadline(policy: Austere, now: int) -> Optional[int]:
    return now + policy.deadline if policy.mode == "measured" else None


def decide_on_deref(policy: Policy, reg: str, *, is_primary: bool, age: int, now: int) -> ResumePlan:
    """Plan for a read of ``reg`` whose local replica is ``age`` ms stale."""
    if isinstance(policy, Lasp):
        return ResumeNow()
    if isinstance(policy, Austere):
        return ResumeAfter(Transaction((Read(reg),), deadline=_txn_deadline(policy, now)))
    if is_primary:
        # the primary is the freshness reference; nothing to fetch
        return ResumeNow()
    if policy.latency_bound is None:
        if age <= policy.max_staleness:
            return ResumeNow()
        return ResumeAfter(Refresh(reg, retry=True))
    return ResumeAtDeadline(now + policy.latency_bound, Refresh(reg), policy.max_staleness)


def decide_on_store(policy: Policy, reg: str, op, *, now: int) -> ResumePlan:
    """Writes are local under Lasp and Spry, transactional under Austere."""
    if isinstance(policy, Austere):
        return ResumeAfter(Transaction((Write(reg, op),), deadline=_txn_deadline(policy, now)))
    return ResumeNow()


# ---------------------------------------------------------------------------
# Runtime reconfiguration


@dataclass
class PolicyTable:
    """Per-register policy timelines; ``policy_at(reg, t)`` is the policy
    in force for an access made at time t."""

    _times: dict = field(default_factory=dict)
    _policies: dict = field(default_factory=dict)

    def declare(self, reg: str, policy: Policy) -> None:
        self._times[reg] = [0]
        self._policies[reg] = [policy]

    def reconfigure(self, reg: str, new_policy: Policy, at: int) -> None:
        if not isinstance(new_policy, (Lasp, Austere, Spry)):
            raise InvalidPolicy(f"not a policy: {new_policy!r}")
        if reg not in self._times:
            raise KeyError(reg)
        times, pols = self._times[reg], self._policies[reg]
        i = bisect.bisect_right(times, at)
        times.insert(i, at)
        pols.insert(i, new_policy)

    def policy_at(self, reg: str, t: int) -> Policy:
        times = self._times[reg]
        return self._policies[reg][bisect.bisect_right(times, t) - 1]

    def registers(self) -> list[str]:
        return list(self._times)
