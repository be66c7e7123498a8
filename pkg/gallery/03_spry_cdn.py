"""
Bounded staleness at the edge
=============================

A catalog at an origin server is cached at three edges. Reads must never
return a copy older than 200 ms and should not wait on the origin for more
than 40 ms. One edge loses the origin for a while; later the operator
tightens the staleness bound while the system keeps running.
"""

from pathlib import Path

from capspace.harness.checks import check_staleness
from capspace.harness.run import run
from capspace.harness.scenario import load_scenario

scenario = load_scenario(Path(__file__).resolve().parent.parent / "scenarios" / "spry_cdn.scn")
res = run(scenario)

print(f"{'t':>5} {'node':>4}  {'program':32s} {'outcome':12s} {'source':9s} {'age':>4} {'wait':>4}  policy")
for h in res.history:
    for a in h.accesses:
        if a.kind != "read":
            continue
        outcome = h.value if h.status == "completed" else h.status
        print(f"{h.invoked:5d} {h.node:4d}  {h.program:32s} {outcome[:12]:12s} {a.source or '-':9s} "
              f"{'-' if a.age is None else a.age:>4} {'-' if a.wait is None else a.wait:>4}  {a.policy}")

# Edge 3 answers from cache while its copy is young enough, refuses once
# it is too old, and every served read is within bounds.
print("\nstaleness violations:", check_staleness(res.history))
