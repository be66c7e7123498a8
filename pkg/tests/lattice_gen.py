"""Random lattice values built only through update and merge."""

from __future__ import annotations

import random

from capspace.lattice import (
    Add,
    Assign,
    Decrement,
    Increment,
    Kind,
    Remove,
    bottom,
    merge,
    update,
)

ACTORS = (0, 1, 2)
ELEMENTS = (0, 1, 2, 3)


def random_op(kind: Kind, rng: random.Random, actor: int):
    e = rng.choice(ELEMENTS)
    if kind is Kind.GCOUNTER:
        return Increment(actor)
    if kind is Kind.PNCOUNTER:
        return rng.choice([Increment(actor), Decrement(actor)])
    if kind is Kind.GSET:
        return Add(e)
    if kind in (Kind.TWOPSET, Kind.ORSET):
        return rng.choice([Add(e, actor), Remove(e)])
    return Assign(e, rng.randrange(0, 20), actor)


def random_replicas(kind: Kind, rng: random.Random, n: int = 3, steps: int = 12):
    """States of ``n`` replicas after a random mix of local updates and merges.

    Each replica updates only as its own actor, so ORSet tags stay unique
    across the family and any two results are genuine replica states.
    """
    states = [bottom(kind) for _ in range(n)]
    for _ in range(steps):
        i = rng.randrange(n)
        if rng.random() < 0.25:
            states[i] = merge(states[i], states[rng.randrange(n)])
        else:
            states[i] = update(states[i], random_op(kind, rng, ACTORS[i % len(ACTORS)]))
    return states
