"""State-based CRDTs.

Every value here is an element of a bounded join-semilattice: ``merge``
computes the least upper bound, ``leq`` is the partial order, and
``update`` only ever moves a value upward. Values are immutable frozen
dataclasses whose payloads are kept in a canonical (sorted, zero-free)
form, so structural equality coincides with lattice equality.

Six kinds are provided:

* ``GCounter``   grow-only counter, one non-negative entry per actor
* ``PNCounter``  pair of GCounters (increments, decrements)
* ``GSet``       grow-only set
* ``TwoPSet``    add-set plus remove-set; remove wins, permanently
* ``ORSet``      observed-remove set with unique tags; add wins
* ``LWWRegister`` last-writer-wins register, ties broken by larger actor

Example::

    a = update(bottom(Kind.GCOUNTER), Increment("a"))
    b = update(bottom(Kind.GCOUNTER), Increment("b"))
    assert query(merge(a, b)) == 2
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, ClassVar, Hashable, Iterable, Mapping, Union

from .errors import InvalidKind, InvalidOp, KindMismatch

ActorId = Hashable
Tag = tuple  # (ActorId, seq)

LWW_BOTTOM_TS = -1


class Kind(str, Enum):
    GCOUNTER = "gcounter"
    PNCOUNTER = "pncounter"
    GSET = "gset"
    TWOPSET = "twopset"
    ORSET = "orset"
    LWW = "lww"


def sort_key(x: Any) -> tuple:
    """Total order over the element/actor domain used for canonical forms."""
    if x is None:
        return (0,)
    if isinstance(x, bool):
        return (1, int(x))
    if isinstance(x, int):
        return (2, x)
    if isinstance(x, str):
        return (3, x)
    if isinstance(x, tuple):
        return (4, tuple(sort_key(i) for i in x))
    if isinstance(x, frozenset):
        return (5, tuple(sorted(sort_key(i) for i in x)))
    return (9, type(x).__name__, repr(x))


def render_element(x: Any) -> str:
    if x is None:
        return "nil"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, tuple):
        return "(" + ",".join(render_element(i) for i in x) + ")"
    if isinstance(x, frozenset):
        return "#{" + ",".join(render_element(i) for i in _sorted(x)) + "}"
    return repr(x)


def _sorted(items: Iterable) -> list:
    return sorted(items, key=sort_key)


def _render_set(items: Iterable) -> str:
    return "{" + ",".join(render_element(i) for i in _sorted(items)) + "}"


def _render_tag(tag: Tag) -> str:
    return f"{render_element(tag[0])}.{tag[1]}"


def _render_tags(tags: Iterable[Tag]) -> str:
    return "[" + ",".join(_render_tag(t) for t in _sorted(tags)) + "]"


# ---------------------------------------------------------------------------
# Update operations


@dataclass(frozen=True)
class Increment:
    actor: ActorId


@dataclass(frozen=True)
class Decrement:
    actor: ActorId


@dataclass(frozen=True)
class Add:
    element: Hashable
    actor: ActorId = None  # only ORSet uses it, to mint a tag


@dataclass(frozen=True)
class Remove:
    element: Hashable


@dataclass(frozen=True)
class Assign:
    element: Hashable
    timestamp: int
    actor: ActorId


UpdateOp = Union[Increment, Decrement, Add, Remove, Assign]


def render_op(op: UpdateOp) -> str:
    if isinstance(op, Increment):
        return f"inc({render_element(op.actor)})"
    if isinstance(op, Decrement):
        return f"dec({render_element(op.actor)})"
    if isinstance(op, Add):
        return f"add({render_element(op.element)},{render_element(op.actor)})"
    if isinstance(op, Remove):
        return f"remove({render_element(op.element)})"
    if isinstance(op, Assign):
        return (
            f"assign({render_element(op.element)},{op.timestamp},"
            f"{render_element(op.actor)})"
        )
    raise InvalidOp(f"not an update op: {op!r}")


# ---------------------------------------------------------------------------
# Counters


def _norm_counts(counts: Mapping | Iterable) -> tuple:
    items = counts.items() if isinstance(counts, Mapping) else counts
    out = {}
    for actor, n in items:
        if not isinstance(n, int) or n < 0:
            raise ValueError(f"counter entries must be non-negative ints, got {n!r}")
        if n:
            out[actor] = n
    return tuple((a, out[a]) for a in _sorted(out))


@dataclass(frozen=True)
class GCounter:
    counts: tuple = ()

    kind: ClassVar[Kind] = Kind.GCOUNTER

    def __post_init__(self):
        object.__setattr__(self, "counts", _norm_counts(self.counts))

    def as_dict(self) -> dict:
        return dict(self.counts)

    def get(self, actor: ActorId) -> int:
        return self.as_dict().get(actor, 0)

    def merge(self, other: GCounter) -> GCounter:
        merged = self.as_dict()
        for actor, n in other.counts:
            merged[actor] = max(merged.get(actor, 0), n)
        return GCounter(merged)

    def leq(self, other: GCounter) -> bool:
        theirs = other.as_dict()
        return all(n <= theirs.get(actor, 0) for actor, n in self.counts)

    def update(self, op: UpdateOp) -> GCounter:
        if not isinstance(op, Increment):
            raise InvalidOp(f"{render_op(op)} is not valid on a gcounter")
        counts = self.as_dict()
        counts[op.actor] = counts.get(op.actor, 0) + 1
        return GCounter(counts)

    def query(self) -> int:
        return sum(n for _, n in self.counts)

    def render(self) -> str:
        return "GCounter{" + self._body() + "}"

    def _body(self) -> str:
        return ",".join(f"{render_element(a)}:{n}" for a, n in self.counts)


@dataclass(frozen=True)
class PNCounter:
    p: GCounter = GCounter()
    n: GCounter = GCounter()

    kind: ClassVar[Kind] = Kind.PNCOUNTER

    def __post_init__(self):
        if not isinstance(self.p, GCounter):
            object.__setattr__(self, "p", GCounter(self.p))
        if not isinstance(self.n, GCounter):
            object.__setattr__(self, "n", GCounter(self.n))

    def merge(self, other: PNCounter) -> PNCounter:
        return PNCounter(self.p.merge(other.p), self.n.merge(other.n))

    def leq(self, other: PNCounter) -> bool:
        return self.p.leq(other.p) and self.n.leq(other.n)

    def update(self, op: UpdateOp) -> PNCounter:
        if isinstance(op, Increment):
            return PNCounter(self.p.update(op), self.n)
        if isinstance(op, Decrement):
            return PNCounter(self.p, self.n.update(Increment(op.actor)))
        raise InvalidOp(f"{render_op(op)} is not valid on a pncounter")

    def query(self) -> int:
        return self.p.query() - self.n.query()

    def render(self) -> str:
        return "PNCounter{P={" + self.p._body() + "},N={" + self.n._body() + "}}"


# ---------------------------------------------------------------------------
# Sets


@dataclass(frozen=True)
class GSet:
    items: frozenset = frozenset()

    kind: ClassVar[Kind] = Kind.GSET

    def __post_init__(self):
        object.__setattr__(self, "items", frozenset(self.items))

    def merge(self, other: GSet) -> GSet:
        return GSet(self.items | other.items)

    def leq(self, other: GSet) -> bool:
        return self.items <= other.items

    def update(self, op: UpdateOp) -> GSet:
        if not isinstance(op, Add):
            raise InvalidOp(f"{render_op(op)} is not valid on a gset")
        return GSet(self.items | {op.element})

    def query(self) -> frozenset:
        return self.items

    def render(self) -> str:
        return "GSet" + _render_set(self.items)


@dataclass(frozen=True)
class TwoPSet:
    """Two-phase set. Removing an element tombstones it for good.

    ``Remove`` of an element that was never added locally is a no-op:
    a replica can only remove what it has observed.
    """

    added: frozenset = frozenset()
    removed: frozenset = frozenset()

    kind: ClassVar[Kind] = Kind.TWOPSET

    def __post_init__(self):
        object.__setattr__(self, "added", frozenset(self.added))
        object.__setattr__(self, "removed", frozenset(self.removed))

    def merge(self, other: TwoPSet) -> TwoPSet:
        return TwoPSet(self.added | other.added, self.removed | other.removed)

    def leq(self, other: TwoPSet) -> bool:
        return self.added <= other.added and self.removed <= other.removed

    def update(self, op: UpdateOp) -> TwoPSet:
        if isinstance(op, Add):
            return TwoPSet(self.added | {op.element}, self.removed)
        if isinstance(op, Remove):
            if op.element not in self.added:
                return self
            return TwoPSet(self.added, self.removed | {op.element})
        raise InvalidOp(f"{render_op(op)} is not valid on a twopset")

    def query(self) -> frozenset:
        return self.added - self.removed

    def render(self) -> str:
        return f"TwoPSet{{A={_render_set(self.added)},R={_render_set(self.removed)}}}"


def _norm_entries(entries: Mapping | Iterable) -> tuple:
    items = entries.items() if isinstance(entries, Mapping) else entries
    out: dict = {}
    for element, tags in items:
        tags = frozenset(tags)
        if tags:
            out[element] = out.get(element, frozenset()) | tags
    return tuple((e, out[e]) for e in _sorted(out))


@dataclass(frozen=True)
class ORSet:
    """Observed-remove set.

    ``entries`` maps each element to every tag ever minted for it;
    ``removed`` holds the tags that some replica has removed. An element
    is visible while at least one of its tags is not removed, so a
    concurrent re-add (fresh tag) survives a remove (add wins).
    """

    entries: tuple = ()
    removed: frozenset = frozenset()

    kind: ClassVar[Kind] = Kind.ORSET

    def __post_init__(self):
        object.__setattr__(self, "entries", _norm_entries(self.entries))
        object.__setattr__(self, "removed", frozenset(self.removed))
        if not self.removed <= self.issued_tags():
            raise ValueError("removed tags must be a subset of issued tags")

    def as_dict(self) -> dict:
        return dict(self.entries)

    def issued_tags(self) -> frozenset:
        return frozenset().union(*(tags for _, tags in self.entries))

    def live_tags(self, element: Hashable) -> frozenset:
        return self.as_dict().get(element, frozenset()) - self.removed

    def merge(self, other: ORSet) -> ORSet:
        merged = self.as_dict()
        for element, tags in other.entries:
            merged[element] = merged.get(element, frozenset()) | tags
        return ORSet(merged, self.removed | other.removed)

    def leq(self, other: ORSet) -> bool:
        theirs = other.as_dict()
        return self.removed <= other.removed and all(
            tags <= theirs.get(e, frozenset()) for e, tags in self.entries
        )

    def next_seq(self, actor: ActorId) -> int:
        return 1 + max((s for a, s in self.issued_tags() if a == actor), default=0)

    def update(self, op: UpdateOp) -> ORSet:
        if isinstance(op, Add):
            if op.actor is None:
                raise InvalidOp("orset add needs an actor to mint a tag")
            entries = self.as_dict()
            tag = (op.actor, self.next_seq(op.actor))
            entries[op.element] = entries.get(op.element, frozenset()) | {tag}
            return ORSet(entries, self.removed)
        if isinstance(op, Remove):
            observed = self.as_dict().get(op.element, frozenset())
            return ORSet(self.entries, self.removed | observed)
        raise InvalidOp(f"{render_op(op)} is not valid on an orset")

    def query(self) -> frozenset:
        return frozenset(e for e, tags in self.entries if tags - self.removed)

    def render(self) -> str:
        body = ",".join(f"{render_element(e)}:{_render_tags(t)}" for e, t in self.entries)
        return f"ORSet{{E={{{body}}},R={_render_tags(self.removed)}}}"


# ---------------------------------------------------------------------------
# Register


@dataclass(frozen=True)
class LWWRegister:
    """Last-writer-wins register; the bottom value has timestamp -1."""

    timestamp: int = LWW_BOTTOM_TS
    actor: ActorId = None
    value: Hashable = None

    kind: ClassVar[Kind] = Kind.LWW

    def __post_init__(self):
        if self.timestamp < LWW_BOTTOM_TS:
            raise ValueError("lww timestamp below the bottom sentinel")
        if self.timestamp == LWW_BOTTOM_TS and (self.actor, self.value) != (None, None):
            raise ValueError("the bottom register carries no actor or value")

    def _key(self) -> tuple:
        return (self.timestamp, sort_key(self.actor), sort_key(self.value))

    def merge(self, other: LWWRegister) -> LWWRegister:
        return other if other._key() > self._key() else self

    def leq(self, other: LWWRegister) -> bool:
        return self._key() <= other._key()

    def update(self, op: UpdateOp) -> LWWRegister:
        if not isinstance(op, Assign):
            raise InvalidOp(f"{render_op(op)} is not valid on an lww register")
        if op.timestamp < 0:
            raise InvalidOp("assign timestamps are simulated ms >= 0")
        return self.merge(LWWRegister(op.timestamp, op.actor, op.element))

    def query(self) -> Hashable:
        return self.value

    def render(self) -> str:
        if self.timestamp == LWW_BOTTOM_TS:
            return "LWW{bottom}"
        return (
            f"LWW{{ts={self.timestamp},actor={render_element(self.actor)},"
            f"value={render_element(self.value)}}}"
        )


LatticeValue = Union[GCounter, PNCounter, GSet, TwoPSet, ORSet, LWWRegister]

_BY_KIND = {
    Kind.GCOUNTER: GCounter,
    Kind.PNCOUNTER: PNCounter,
    Kind.GSET: GSet,
    Kind.TWOPSET: TwoPSet,
    Kind.ORSET: ORSet,
    Kind.LWW: LWWRegister,
}

SET_KINDS = frozenset({Kind.GSET, Kind.TWOPSET, Kind.ORSET})


# ---------------------------------------------------------------------------
# Module-level API


def bottom(kind: Kind | str) -> LatticeValue:
    return _BY_KIND[Kind(kind)]()


def _same_kind(a: LatticeValue, b: LatticeValue) -> None:
    if type(a) is not type(b):
        raise KindMismatch(f"cannot combine {a.kind.value} with {b.kind.value}")


def merge(a: LatticeValue, b: LatticeValue) -> LatticeValue:
    """Least upper bound of two values of the same kind."""
    _same_kind(a, b)
    return a.merge(b)


def leq(a: LatticeValue, b: LatticeValue) -> bool:
    _same_kind(a, b)
    return a.leq(b)


def update(v: LatticeValue, op: UpdateOp) -> LatticeValue:
    """Apply ``op`` at one replica. The result is always >= ``v``."""
    return v.update(op)


def query(v: LatticeValue) -> Any:
    return v.query()


def render(v: LatticeValue) -> str:
    return v.render()


def fold_merge(kind: Kind | str, values: Iterable[LatticeValue]) -> LatticeValue:
    acc = bottom(kind)
    for v in values:
        acc = merge(acc, v)
    return acc


def map_set(v: LatticeValue, f: Callable[[Hashable], Hashable]) -> LatticeValue:
    """Image of a set CRDT under ``f``, as a CRDT of the same kind.

    The result is recomputed from the whole input state. For ORSets the
    tags travel with their elements, so mapping commutes with merge.
    """
    if isinstance(v, GSet):
        return GSet(f(e) for e in v.items)
    if isinstance(v, TwoPSet):
        visible = frozenset(f(e) for e in v.query())
        added = frozenset(f(e) for e in v.added)
        # an image can be both removed and visible when f is not injective
        removed = frozenset(f(e) for e in v.removed) - visible
        return TwoPSet(added, removed)
    if isinstance(v, ORSet):
        entries: dict = {}
        for e, tags in v.entries:
            fe = f(e)
            entries[fe] = entries.get(fe, frozenset()) | tags
        return ORSet(entries, v.removed)
    raise InvalidKind(f"map_set needs a set kind, got {v.kind.value}")


def filter_set(v: LatticeValue, p: Callable[[Hashable], bool]) -> LatticeValue:
    if isinstance(v, GSet):
        return GSet(e for e in v.items if p(e))
    if isinstance(v, TwoPSet):
        return TwoPSet(
            (e for e in v.added if p(e)), (e for e in v.removed if p(e))
        )
    if isinstance(v, ORSet):
        kept = [(e, tags) for e, tags in v.entries if p(e)]
        live = frozenset().union(*(tags for _, tags in kept))
        return ORSet(kept, v.removed & live)
    raise InvalidKind(f"filter_set needs a set kind, got {v.kind.value}")


# ---------------------------------------------------------------------------
# JSON round trip (scalar elements and actors only)


def _tag_in(t) -> Tag:
    return (t[0], t[1])


def to_json(v: LatticeValue) -> dict:
    if isinstance(v, GCounter):
        return {"kind": v.kind.value, "counts": [[a, n] for a, n in v.counts]}
    if isinstance(v, PNCounter):
        return {
            "kind": v.kind.value,
            "p": [[a, n] for a, n in v.p.counts],
            "n": [[a, n] for a, n in v.n.counts],
        }
    if isinstance(v, GSet):
        return {"kind": v.kind.value, "items": _sorted(v.items)}
    if isinstance(v, TwoPSet):
        return {
            "kind": v.kind.value,
            "added": _sorted(v.added),
            "removed": _sorted(v.removed),
        }
    if isinstance(v, ORSet):
        return {
            "kind": v.kind.value,
            "entries": [[e, [list(t) for t in _sorted(tags)]] for e, tags in v.entries],
            "removed": [list(t) for t in _sorted(v.removed)],
        }
    if isinstance(v, LWWRegister):
        return {
            "kind": v.kind.value,
            "timestamp": v.timestamp,
            "actor": v.actor,
            "value": v.value,
        }
    raise InvalidKind(f"unknown lattice value {v!r}")


def from_json(d: Mapping) -> LatticeValue:
    kind = Kind(d["kind"])
    if kind is Kind.GCOUNTER:
        return GCounter((a, n) for a, n in d["counts"])
    if kind is Kind.PNCOUNTER:
        return PNCounter(GCounter((a, n) for a, n in d["p"]), GCounter((a, n) for a, n in d["n"]))
    if kind is Kind.GSET:
        return GSet(d["items"])
    if kind is Kind.TWOPSET:
        return TwoPSet(d["added"], d["removed"])
    if kind is Kind.ORSET:
        return ORSet(
            ((e, {_tag_in(t) for t in tags}) for e, tags in d["entries"]),
            {_tag_in(t) for t in d["removed"]},
        )
    return LWWRegister(d["timestamp"], d["actor"], d["value"])
