"""
The CAP boundary, measured
==========================

One counter, primaried at node 0 and replicated on three nodes. Node 0 is
cut off from the other two between 100 and 300 ms. The same workload runs
under the three policies; an op is available if it finishes within 50 ms.
"""

from pathlib import Path

from capspace.harness.run import run
from capspace.harness.scenario import load_scenario

scenario = load_scenario(Path(__file__).resolve().parent.parent / "scenarios" / "cap_demo.scn")

for policy in ("lasp", "austere mode=pure", "spry latency=30"):
    res = run(scenario.with_policy(policy))
    m = res.metrics
    print(f"{policy:20s} availability {m.availability:.3f}  "
          f"max latency {m.latency_max:4d} ms  max served age {max(m.max_age.values()):4d} ms  "
          f"messages {m.messages}")

# Lasp never waits, but reads during the partition are stale. Austere
# serves one copy to everybody, so ops invoked during the partition wait
# for the heal and miss their deadline. Spry tries the primary for 30 ms
# and falls back to the local copy.
res = run(scenario.with_policy("austere mode=pure"))
print("\nAustere ops that missed the deadline:")
for h in res.history:
    if not h.available:
        print(f"  op {h.op} at t={h.invoked} on node {h.node}: {h.program} took {h.latency} ms")
