"""
A tour of the replicated data types
===================================

Every register in the runtime holds one of six join-semilattices. Replicas
update locally and merge by taking least upper bounds, so they agree once
they have seen the same updates, whatever the order.
"""

from capspace.lattice import (
    Add, Assign, GCounter, Increment, ORSet, Remove, TwoPSet, bottom,
    filter_set, leq, map_set, merge, query, render, update,
)

# Two replicas of a grow-only counter, each counting its own increments.
a = update(update(bottom("gcounter"), Increment(0)), Increment(0))
b = update(bottom("gcounter"), Increment(1))
print("a =", render(a), "b =", render(b))
print("a join b =", render(merge(a, b)), "value", query(merge(a, b)))
print("a <= a join b:", leq(a, merge(a, b)))

# Concurrent add and remove. The observed-remove set lets the add win:
# replica B removes the tag it saw, replica A re-adds with a fresh tag.
start = update(bottom("orset"), Add("x", 0))
removed_at_b = update(start, Remove("x"))
readded_at_a = update(start, Add("x", 0))
print("ORSet after merge:", query(merge(removed_at_b, readded_at_a)))

# The two-phase set takes the other side: once removed, gone for good.
tp = update(update(bottom("twopset"), Add("x")), Remove("x"))
print("TwoPSet remove then add:", query(update(tp, Add("x"))))

# Last-writer-wins: larger timestamp, then larger actor, wins.
lww = merge(update(bottom("lww"), Assign("red", 5, 1)), update(bottom("lww"), Assign("blue", 5, 2)))
print("LWW tie at ts=5:", query(lww))

# Functional programming over set CRDTs: mapping then merging agrees with
# merging then mapping, observably.
s1 = update(bottom("orset"), Add(1, 0))
s2 = update(bottom("orset"), Add(2, 1))
double = lambda x: 2 * x  # noqa: E731
print("map then merge:", query(merge(map_set(s1, double), map_set(s2, double))))
print("merge then map:", query(map_set(merge(s1, s2), double)))
print("evens:", query(filter_set(merge(s1, s2), lambda x: x % 2 == 0)))
