"""
Sweeping the partition length
=============================

How availability, staleness and convergence respond as the partition in
the CAP demo grows. The table is tab-separated, ready for plotting.
"""

from pathlib import Path

from capspace.harness.scenario import load_scenario
from capspace.harness.sweep import sweep

scenario = load_scenario(Path(__file__).resolve().parent.parent / "scenarios" / "cap_demo.scn")
table = sweep(scenario, "partition-duration", [0, 50, 100, 150, 200, 300, 400])
print(table.to_tsv())
