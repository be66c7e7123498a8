"""Seeded single-threaded discrete-event network simulator.

The simulator owns the only clock and the only PRNG. Everything that
waits, sends or rolls dice goes through it, so a (scenario, seed) pair
always replays the same event sequence.

Time is integer simulated milliseconds. Events are processed in
``(time, seq)`` order where ``seq`` is a global scheduling counter.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import OverlappingGroups, PartitionError

NodeId = int


@dataclass(frozen=True)
class Fixed:
    ms: int

    def __post_init__(self):
        if self.ms < 0:
            raise ValueError("latency must be >= 0")

    def sample(self, rng: random.Random) -> int:
        return self.ms

    @property
    def max_ms(self) -> int:
        return self.ms

    def render(self) -> str:
        return f"fixed {self.ms}"


@dataclass(frozen=True)
class Uniform:
    min_ms: int
    max_ms: int

    def __post_init__(self):
        if not 0 <= self.min_ms <= self.max_ms:
            raise ValueError("uniform latency needs 0 <= min <= max")

    def sample(self, rng: random.Random) -> int:
        return rng.randint(self.min_ms, self.max_ms)

    def render(self) -> str:
        return f"uniform {self.min_ms} {self.max_ms}"


@dataclass(frozen=True)
class LinkModel:
    latency: Fixed | Uniform = Fixed(10)
    drop_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")

    @property
    def max_latency(self) -> int:
        return self.latency.max_ms


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    node: Optional[NodeId] = field(compare=False)
    detail: str = field(compare=False)
    action: Optional[Callable[[], None]] = field(compare=False, repr=False, default=None)


def validate_groups(groups: Iterable[Iterable[NodeId]], n_nodes: int) -> tuple[frozenset, ...]:
    seen: set = set()
    out = []
    for g in groups:
        g = frozenset(g)
        if not g:
            raise PartitionError("partition groups must be non-empty")
        if g & seen:
            raise OverlappingGroups(f"node(s) {sorted(g & seen)} appear in two groups")
        bad = [n for n in g if not 0 <= n < n_nodes]
        if bad:
            raise PartitionError(f"unknown node(s) {bad}")
        seen |= g
        out.append(g)
    if len(seen) != n_nodes:
        raise PartitionError(f"partition does not cover node(s) {sorted(set(range(n_nodes)) - seen)}")
    return tuple(sorted(out, key=min))


def render_groups(groups: Iterable[frozenset]) -> str:
    return " | ".join(" ".join(str(n) for n in sorted(g)) for g in groups)


class Simulator:
    """Event loop, clock, PRNG, partition table and node liveness.

    Args:
        n_nodes: nodes are ``0 .. n_nodes - 1``.
        link: latency/drop model applied to every non-local send.
        seed: seed of the single PRNG.
    """

    def __init__(self, n_nodes: int, link: LinkModel = LinkModel(), seed: int = 0):
        if n_nodes < 1:
            raise ValueError("need at least one node")
        self.n_nodes = n_nodes
        self.link = link
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0
        self.trace: list[str] = []
        self.messages_sent = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._current_seq = 0
        self._group_of = {n: 0 for n in range(n_nodes)}
        self.groups: tuple[frozenset, ...] = (frozenset(range(n_nodes)),)
        self.partition_since: Optional[int] = None
        self._up = [True] * n_nodes
        self._status_listeners: list[Callable[[NodeId, bool], None]] = []

    # -- scheduling -----------------------------------------------------------

    def schedule(
        self,
        at: int,
        kind: str,
        node: Optional[NodeId],
        detail: str,
        action: Optional[Callable[[], None]] = None,
    ) -> Event:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} < now {self.now}")
        self._seq += 1
        ev = Event(at, self._seq, kind, node, detail, action)
        heapq.heappush(self._queue, ev)
        return ev

    def timer(self, at: int, owner: Optional[NodeId], tag: str, action: Callable[[], None]) -> Event:
        return self.schedule(at, "timer", owner, tag, action)

    def note(self, kind: str, node: Optional[NodeId], detail: str) -> None:
        """Record a trace line that is not an event (votes, state changes...).

        Notes carry the seq of the event whose handler emitted them.
        """
        self.trace.append(_line(self.now, self._current_seq, kind, node, detail))

    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> Optional[int]:
        return self._queue[0].time if self._queue else None

    def step(self) -> Optional[Event]:
        if not self._queue:
            return None
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        self._current_seq = ev.seq
        self.trace.append(_line(ev.time, ev.seq, ev.kind, ev.node, ev.detail))
        if ev.action is not None:
            ev.action()
        return ev

    def run_until(self, t: int, stop: Optional[Callable[[], bool]] = None) -> int:
        """Process every event with time <= t, then set the clock to t.

        If ``stop`` is given and becomes true after some event, return early
        without advancing the clock past that event.
        """
        if t < self.now:
            raise ValueError(f"run_until({t}) is in the past (now={self.now})")
        processed = 0
        while self._queue and self._queue[0].time <= t:
            self.step()
            processed += 1
            if stop is not None and stop():
                return processed
        self.now = t
        return processed

    # -- network --------------------------------------------------------------

    def reachable(self, a: NodeId, b: NodeId) -> bool:
        return self._group_of[a] == self._group_of[b]

    def is_up(self, node: NodeId) -> bool:
        return self._up[node]

    def send(self, src: NodeId, dst: NodeId, label: str, on_deliver: Callable[[], None]) -> Optional[Event]:
        """Send a message; returns the Deliver event or None if it was lost.

        Local sends (``src == dst``) are delivered at the current time
        without touching the PRNG. Loss is silent to the caller but leaves
        a ``drop`` line in the trace.
        """
        self._check(src)
        self._check(dst)
        detail = f"from={src} to={dst} sent={self.now} {label}"
        if src != dst:
            self.messages_sent += 1
        if not self._up[src]:
            self.note("drop", dst, f"{detail} reason=sender-down")
            return None
        if src == dst:
            return self.schedule(self.now, "deliver", dst, detail, self._deliverer(dst, detail, on_deliver))
        if not self.reachable(src, dst):
            self.note("drop", dst, f"{detail} reason=partition")
            return None
        if not self._up[dst]:
            self.note("drop", dst, f"{detail} reason=receiver-down")
            return None
        p = self.link.drop_prob
        if p > 0.0 and (p >= 1.0 or self.rng.random() < p):
            self.note("drop", dst, f"{detail} reason=loss")
            return None
        at = self.now + self.link.latency.sample(self.rng)
        return self.schedule(at, "deliver", dst, detail, self._deliverer(dst, detail, on_deliver))

    def _deliverer(self, dst: NodeId, detail: str, on_deliver: Callable[[], None]):
        def deliver():
            if not self._up[dst]:
                self.note("drop", dst, f"{detail} reason=receiver-down")
                return
            on_deliver()

        return deliver

    # -- faults ---------------------------------------------------------------

    def set_partition(self, groups: Iterable[Iterable[NodeId]], at: int) -> Event:
        cfg = validate_groups(groups, self.n_nodes)
        return self.schedule(at, "fault", None, f"partition {render_groups(cfg)}", lambda: self._apply_groups(cfg))

    def heal(self, at: int) -> Event:
        cfg = (frozenset(range(self.n_nodes)),)
        return self.schedule(at, "fault", None, "heal", lambda: self._apply_groups(cfg))

    def _apply_groups(self, cfg: tuple[frozenset, ...]) -> None:
        self.groups = cfg
        self.partition_since = None if len(cfg) == 1 else self.now
        for i, g in enumerate(cfg):
            for n in g:
                self._group_of[n] = i

    def set_node_status(self, node: NodeId, up: bool, at: int) -> Event:
        self._check(node)
        word = "recover" if up else "crash"
        return self.schedule(at, "fault", node, word, lambda: self._apply_status(node, up))

    def _apply_status(self, node: NodeId, up: bool) -> None:
        if self._up[node] == up:
            return
        self._up[node] = up
        for listener in self._status_listeners:
            listener(node, up)

    def on_status_change(self, listener: Callable[[NodeId, bool], None]) -> None:
        self._status_listeners.append(listener)

    def _check(self, node: NodeId) -> None:
        if not 0 <= node < self.n_nodes:
            raise ValueError(f"unknown node {node}")


def _line(t: int, seq: int, kind: str, node: Optional[NodeId], detail: str) -> str:
    return f"t={t} seq={seq} kind={kind} node={'-' if node is None else node} detail={detail}"
