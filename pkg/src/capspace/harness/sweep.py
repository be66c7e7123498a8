"""Parameter sweeps: one run per (value, policy), tabulated as TSV."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import UnknownParameter, ValidationError
from ..policy import parse_policy
from .run import run
from .scenario import Fault, Scenario

PARAMETERS = ("partition-duration",)
DEFAULT_POLICIES = ("lasp", "austere mode=pure", "spry latency=30")


def with_partition_duration(scenario: Scenario, duration: int) -> Scenario:
    """Move the heal of the scenario's first partition to ``start + duration``.

    Duration 0 removes that partition altogether.
    """
    if duration < 0:
        raise ValidationError(f"partition duration must be >= 0, got {duration}")
    windows = scenario.partition_windows()
    if not windows:
        raise ValidationError("scenario has no partition to vary")
    start, end = windows[0]
    faults, dropped_part, dropped_heal = [], False, False
    for f in scenario.faults:
        if f.kind == "partition" and f.time == start and not dropped_part:
            dropped_part = True
            if duration > 0:
                faults.append(f)
            continue
        if f.kind == "heal" and end is not None and f.time == end and not dropped_heal:
            dropped_heal = True
            continue
        faults.append(f)
    if duration > 0:
        faults.append(Fault(start + duration, "heal"))
    faults.sort(key=lambda f: f.time)
    return replace(scenario, faults=tuple(faults), horizon=max(scenario.horizon, start + duration))


@dataclass(frozen=True)
class SweepTable:
    parameter: str
    policies: tuple
    rows: tuple  # (value, {policy: Metrics})

    def columns(self) -> list[str]:
        cols = ["value"]
        for kind in ("availability", "max_age", "convergence_ms"):
            cols += [f"{kind}[{p}]" for p in self.policies]
        return cols

    def column(self, name: str) -> list:
        i = self.columns().index(name)
        return [r[i] for r in self.records()]

    def records(self) -> list[list]:
        out = []
        for value, by_policy in self.rows:
            rec = [value]
            rec += [by_policy[p].availability for p in self.policies]
            rec += [max(by_policy[p].max_age.values(), default=0) for p in self.policies]
            rec += [by_policy[p].convergence_ms for p in self.policies]
            out.append(rec)
        return out

    def to_tsv(self) -> str:
        def fmt(v):
            if v is None:
                return "-"
            return f"{v:.6f}" if isinstance(v, float) else str(v)

        lines = ["\t".join(self.columns())]
        lines += ["\t".join(fmt(v) for v in rec) for rec in self.records()]
        return "\n".join(lines) + "\n"


def sweep(
    scenario: Scenario,
    parameter: str,
    values: Iterable[int],
    policies: Sequence[str] = DEFAULT_POLICIES,
) -> SweepTable:
    """Run ``scenario`` once per value and policy.

    Raises:
        UnknownParameter: ``parameter`` is not one of :data:`PARAMETERS`.
    """
    if parameter not in PARAMETERS:
        raise UnknownParameter(f"unknown sweep parameter {parameter!r}; known: {', '.join(PARAMETERS)}")
    policies = tuple(parse_policy(p).render() for p in policies)
    rows = []
    for v in values:
        varied = with_partition_duration(scenario, int(v))
        rows.append((int(v), {p: run(varied.with_policy(p)).metrics for p in policies}))
    return SweepTable(parameter, policies, tuple(rows))


def write_sweep(table: SweepTable, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.tsv"
    path.write_text(table.to_tsv())
    return path
