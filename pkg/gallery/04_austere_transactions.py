"""
Austere: one copy, at a price
=============================

Every register access becomes a two-phase-locked, two-phase-committed
transaction over all replicas. Concurrent deposits never lose an update,
the recorded history is serializable, and nothing commits while a
replica is unreachable.
"""

from pathlib import Path

from capspace.harness.checks import check_serializable
from capspace.harness.run import dump_states, run
from capspace.harness.scenario import load_scenario
from capspace.lattice import render

scenario = load_scenario(Path(__file__).resolve().parent.parent / "scenarios" / "austere_counter.scn")
res = run(scenario)

for h in res.history:
    print(f"op {h.op} t={h.invoked:4d} node {h.node}: {h.program:24s} -> {h.status} {h.value} "
          f"({h.latency if h.latency is not None else '-'} ms)")

states = dump_states(res.store)
for reg, replicas in states.final.items():
    print(f"{reg}: " + ", ".join(f"node {n} {render(v)}" for n, v in replicas.items()))

final = {r: states.final[r][states.primaries[r]] for r in states.final}
report = check_serializable(res.txns, final, states.kinds)
print("serializable:", report.ok, "witness order:", " ".join(report.witness))

# The protocol, message by message, for the first transaction.
print()
for line in res.trace:
    if "txn=T1 " in line and ("kind=deliver" in line or "kind=txn" in line):
        print(line)
