"""Seeded random scenarios for property checks."""

from __future__ import annotations

import random

from ..kernel import parse
from ..lattice import Kind
from ..policy import Austere, Lasp
from ..replica import Register
from ..simnet import Fixed, LinkModel, Uniform
from .scenario import Fault, Scenario, WorkloadOp

_STORE_OPS = {
    Kind.GCOUNTER: ["(inc)"],
    Kind.PNCOUNTER: ["(inc)", "(dec)"],
    Kind.GSET: ["(add {e})"],
    Kind.TWOPSET: ["(add {e})", "(add {e})", "(remove {e})"],
    Kind.ORSET: ["(add {e})", "(add {e})", "(remove {e})"],
    Kind.LWW: ["(assign {e})"],
}


def random_store(rng: random.Random, reg: Register) -> str:
    op = rng.choice(_STORE_OPS[reg.kind]).format(e=rng.randrange(5))
    return f"(store {reg.id} {op})"


def _random_groups(rng: random.Random, n: int) -> tuple:
    nodes = list(range(n))
    rng.shuffle(nodes)
    cut = rng.randrange(1, n)
    return (tuple(sorted(nodes[:cut])), tuple(sorted(nodes[cut:])))


def random_convergence_scenario(seed: int, max_updates: int = 100) -> Scenario:
    """3-5 nodes, Lasp registers of random kinds, up to ``max_updates``
    updates in [0, 600), random partition and crash windows all over by
    800, then a quiet gossip tail (period 50) to the horizon."""
    rng = random.Random(seed)
    n = rng.randint(3, 5)
    regs = []
    for i in range(rng.randint(1, 3)):
        kind = rng.choice(list(Kind))
        primary = rng.randrange(n)
        others = [x for x in range(n) if x != primary]
        reps = {primary, *rng.sample(others, rng.randint(1, n - 1))}
        regs.append(Register(f"r{i + 1}", kind, primary, reps, Lasp()))
    workload = []
    for _ in range(rng.randint(0, max_updates)):
        reg = rng.choice(regs)
        node = rng.choice(sorted(reg.replicas))
        workload.append(WorkloadOp(rng.randrange(600), node, parse(random_store(rng, reg))))
    faults = []
    t = 0
    for _ in range(rng.randint(0, 2)):
        start = rng.randrange(t, 700)
        end = rng.randrange(start + 1, 800)
        faults += [Fault(start, "partition", groups=_random_groups(rng, n)), Fault(end, "heal")]
        t = end
        if t >= 699:
            break
    if rng.random() < 0.5:
        node = rng.randrange(n)
        start = rng.randrange(0, 700)
        faults += [Fault(start, "crash", node=node), Fault(rng.randrange(start + 1, 800), "recover", node=node)]
    latency = Fixed(rng.randint(1, 10)) if rng.random() < 0.5 else Uniform(1, rng.randint(2, 15))
    return Scenario(
        n_nodes=n,
        link=LinkModel(latency),
        registers=tuple(regs),
        workload=tuple(sorted(workload, key=lambda w: w.time)),
        faults=tuple(sorted(faults, key=lambda f: f.time)),
        horizon=2000,
        seed=seed,
        gossip=50,
        name=f"random-convergence-{seed}",
    )


def random_austere_scenario(seed: int, max_txns: int = 8) -> Scenario:
    """2-4 nodes, one or two pure-Austere registers, at most ``max_txns``
    register accesses (one transaction each) crowded into [0, 60) so that
    they contend for locks; sometimes a partition that later heals."""
    rng = random.Random(seed)
    n = rng.randint(2, 4)
    regs = []
    for i in range(rng.randint(1, 2)):
        kind = rng.choice([Kind.GCOUNTER, Kind.PNCOUNTER, Kind.GSET, Kind.ORSET, Kind.LWW])
        reps = set(rng.sample(range(n), rng.randint(1, n)))
        regs.append(Register(f"r{i + 1}", kind, rng.choice(sorted(reps)), reps, Austere()))
    workload, budget = [], rng.randint(1, max_txns)
    while budget > 0:
        reg = rng.choice(regs)
        node = rng.randrange(n)
        if budget >= 2 and rng.random() < 0.3:
            other = rng.choice(regs)
            text = f"(app (lam x {random_store(rng, other)}) (deref {reg.id}))"
            budget -= 2
        elif rng.random() < 0.4:
            text = f"(deref {reg.id})"
            budget -= 1
        else:
            text = random_store(rng, reg)
            budget -= 1
        workload.append(WorkloadOp(rng.randrange(60), node, parse(text)))
    faults = []
    if n > 1 and rng.random() < 0.3:
        start = rng.randrange(0, 50)
        faults = [Fault(start, "partition", groups=_random_groups(rng, n)), Fault(start + rng.randint(10, 300), "heal")]
    return Scenario(
        n_nodes=n,
        link=LinkModel(Uniform(1, 8)),
        registers=tuple(regs),
        workload=tuple(sorted(workload, key=lambda w: w.time)),
        faults=tuple(faults),
        horizon=5000,
        seed=seed,
        name=f"random-austere-{seed}",
    )
