"""Command-line entry point.

    capspace run --scenario FILE [--seed N] [--until MS] [--out DIR]
    capspace check --history FILE --kind convergence|serializable|staleness
    capspace sweep --scenario FILE --param partition-duration --values a,b,c --out DIR

``check`` reads ``history.tsv`` and, for convergence and serializability,
the ``states.jsonl`` / ``txns.jsonl`` written next to it by ``run``.
Exit status: 0 on success or a passing check, 1 on a failing check,
2 on bad input.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from ..errors import CapError
from .checks import check_convergence, check_serializable, check_staleness
from .run import parse_states, read_history, read_jsonl, run, txn_from_json, write_outputs
from .scenario import load_scenario
from .sweep import DEFAULT_POLICIES, PARAMETERS, sweep, write_sweep


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.until is not None:
        scenario = replace(scenario, horizon=args.until)
    result = run(scenario, seed=args.seed)
    out = write_outputs(result, args.out)
    m = result.metrics
    print(f"{scenario.name}: {m.available}/{m.ops} ops available ({m.availability:.3f}), "
          f"{m.messages} messages; outputs in {out}")
    return 0


def _cmd_check(args) -> int:
    history_path = Path(args.history)
    folder = history_path.parent
    if args.kind == "staleness":
        violations = check_staleness(read_history(history_path))
        for v in violations:
            print(v.render())
        print(f"staleness: {len(violations)} violation(s)")
        return 1 if violations else 0
    dump = parse_states(read_jsonl(folder / "states.jsonl"))
    if args.kind == "convergence":
        rep = check_convergence(dump.final, dump.updates, dump.kinds)
        for d in rep.diffs:
            print(d)
        print(f"convergence: {'pass' if rep.ok else 'FAIL'}")
        return 0 if rep.ok else 1
    txns = [txn_from_json(d) for d in read_jsonl(folder / "txns.jsonl")]
    final = {r: dump.final[r][dump.primaries[r]] for r in dump.final}
    rep = check_serializable(txns, final, dump.kinds)
    if rep.ok:
        print(f"serializable: pass, witness order {' '.join(rep.witness) or '(empty)'}")
        return 0
    print(f"serializable: FAIL ({rep.reason})")
    return 1


def _cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    policies = [p.strip() for p in args.policies.split(",")] if args.policies else DEFAULT_POLICIES
    table = sweep(scenario, args.param, values, policies)
    path = write_sweep(table, args.out)
    sys.stdout.write(table.to_tsv())
    print(f"written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capspace", description="Consistency-policy workbench on a simulated network.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write trace, history, metrics")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--until", type=int, help="override the scenario horizon (ms)")
    r.add_argument("--out", default="out")
    r.set_defaults(fn=_cmd_run)

    c = sub.add_parser("check", help="run one checker over a recorded run")
    c.add_argument("--history", required=True)
    c.add_argument("--kind", required=True, choices=["convergence", "serializable", "staleness"])
    c.set_defaults(fn=_cmd_check)

    s = sub.add_parser("sweep", help="vary one parameter across policies")
    s.add_argument("--scenario", required=True)
    s.add_argument("--param", required=True, help=f"one of: {', '.join(PARAMETERS)}")
    s.add_argument("--values", required=True, help="comma-separated integers")
    s.add_argument("--policies", help="comma-separated policies (default: lasp, austere, spry latency=30)")
    s.add_argument("--out", default="out")
    s.set_defaults(fn=_cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CapError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
