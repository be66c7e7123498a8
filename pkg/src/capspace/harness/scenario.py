"""Scenario files: a line-oriented, sectioned description of one experiment.

Example::

    # CAP boundary demo
    [nodes]
    count 3

    [links]
    latency fixed 5          # or: latency uniform 2 8
    drop 0

    [registers]
    register r1 kind=gcounter primary=0 replicas=0,1,2 policy=lasp

    [workload]
    # time node [deadline=<ms>] program
    20 1 deadline=50 (store r1 (inc))

    [faults]
    100 partition 0 | 1 2
    300 heal
    150 crash 2
    200 recover 2
    400 reconfigure r1 spry staleness=10

    [run]
    horizon 1000
    seed 1
    gossip 50

``policy=`` takes the rest of its line, so it must come last on a
register line. Workload deadlines are relative to the invocation time.
Every error carries the line number it was found on.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..errors import CapError, InvalidPolicy, ParseError, ValidationError
from ..kernel import Expr, free_vars, parse, registers, render_expr
from ..lattice import Kind
from ..policy import Lasp, Policy, parse_policy
from ..replica import Register
from ..simnet import Fixed, LinkModel, Uniform, render_groups, validate_groups

SECTIONS = ("nodes", "links", "registers", "workload", "faults", "run")


@dataclass(frozen=True)
class WorkloadOp:
    time: int
    node: int
    program: Expr
    deadline: Optional[int] = None  # ms after invocation
    line: Optional[int] = None


@dataclass(frozen=True)
class Fault:
    time: int
    kind: str  # partition | heal | crash | recover | reconfigure
    groups: tuple = ()  # partition
    node: Optional[int] = None  # crash / recover
    reg: Optional[str] = None  # reconfigure
    policy: Optional[Policy] = None  # reconfigure
    line: Optional[int] = None

    def render(self) -> str:
        if self.kind == "partition":
            return f"{self.time} partition {render_groups(self.groups)}"
        if self.kind in ("crash", "recover"):
            return f"{self.time} {self.kind} {self.node}"
        if self.kind == "reconfigure":
            return f"{self.time} reconfigure {self.reg} {self.policy.render()}"
        return f"{self.time} heal"


@dataclass(frozen=True)
class Scenario:
    n_nodes: int
    link: LinkModel
    registers: tuple
    workload: tuple = ()
    faults: tuple = ()
    horizon: int = 1000
    seed: int = 0
    gossip: Optional[int] = None  # period in ms; None disables gossip
    name: str = "scenario"

    def with_policy(self, policy: Policy | str) -> "Scenario":
        """The same scenario with every register declared under ``policy``
        and reconfiguration faults dropped."""
        if isinstance(policy, str):
            policy = parse_policy(policy)
        regs = tuple(replace(r, policy=policy) for r in self.registers)
        faults = tuple(f for f in self.faults if f.kind != "reconfigure")
        return replace(self, registers=regs, faults=faults)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def partition_windows(self) -> list[tuple[int, Optional[int]]]:
        """(start, end) of each partition; end None if never healed."""
        out, start = [], None
        for f in sorted(self.faults, key=lambda f: f.time):
            if f.kind == "partition" and start is None:
                start = f.time
            elif f.kind == "heal" and start is not None:
                out.append((start, f.time))
                start = None
        if start is not None:
            out.append((start, None))
        return out

    def render(self) -> str:
        """Canonical scenario text; ``loads(s.render()) == s`` up to line numbers."""
        lines = [f"# {self.name}", "[nodes]", f"count {self.n_nodes}", "", "[links]"]
        lat = self.link.latency
        if isinstance(lat, Fixed):
            lines.append(f"latency fixed {lat.ms}")
        else:
            lines.append(f"latency uniform {lat.min_ms} {lat.max_ms}")
        lines += [f"drop {self.link.drop_prob}", "", "[registers]"]
        for r in self.registers:
            reps = ",".join(str(n) for n in sorted(r.replicas))
            pol = (r.policy or Lasp()).render()
            lines.append(f"register {r.id} kind={r.kind.value} primary={r.primary} replicas={reps} policy={pol}")
        lines += ["", "[workload]"]
        for w in self.workload:
            dl = f" deadline={w.deadline}" if w.deadline is not None else ""
            lines.append(f"{w.time} {w.node}{dl} {render_expr(w.program)}")
        lines += ["", "[faults]"] + [f.render() for f in self.faults]
        lines += ["", "[run]", f"horizon {self.horizon}", f"seed {self.seed}"]
        if self.gossip is not None:
            lines.append(f"gossip {self.gossip}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing

_INT = re.compile(r"-?\d+\Z")


def _int(tok: str, what: str, line: int, minimum: Optional[int] = 0) -> int:
    if not _INT.match(tok):
        raise ParseError(f"{what} must be an integer, got {tok!r}", line)
    v = int(tok)
    if minimum is not None and v < minimum:
        raise ValidationError(f"{what} must be >= {minimum}, got {v}", line)
    return v


def _strip_comment(raw: str) -> str:
    return raw.split("#", 1)[0].strip()


@dataclass
class _Draft:
    n_nodes: Optional[int] = None
    latency: object = None
    drop: float = 0.0
    registers: list = field(default_factory=list)
    reg_lines: dict = field(default_factory=dict)
    workload: list = field(default_factory=list)
    faults: list = field(default_factory=list)
    run: dict = field(default_factory=dict)


def _parse_nodes(d: _Draft, words: list[str], ln: int) -> None:
    if len(words) != 2 or words[0] != "count":
        raise ParseError("expected 'count <n>'", ln)
    if d.n_nodes is not None:
        raise ParseError("node count given twice", ln)
    d.n_nodes = _int(words[1], "node count", ln, minimum=1)


def _parse_links(d: _Draft, words: list[str], ln: int) -> None:
    if words[0] == "latency":
        if len(words) == 3 and words[1] == "fixed":
            d.latency = Fixed(_int(words[2], "latency", ln))
        elif len(words) == 4 and words[1] == "uniform":
            lo, hi = _int(words[2], "min latency", ln), _int(words[3], "max latency", ln)
            if lo > hi:
                raise ValidationError(f"uniform latency needs min <= max, got {lo} > {hi}", ln)
            d.latency = Uniform(lo, hi)
        else:
            raise ParseError("expected 'latency fixed <ms>' or 'latency uniform <min> <max>'", ln)
    elif words[0] == "drop" and len(words) == 2:
        try:
            p = float(words[1])
        except ValueError:
            raise ParseError(f"drop probability must be a number, got {words[1]!r}", ln) from None
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"drop probability must be in [0, 1], got {p}", ln)
        d.drop = p
    else:
        raise ParseError(f"unknown link setting {' '.join(words)!r}", ln)


def _parse_register(d: _Draft, line: str, ln: int) -> None:
    head, sep, policy_text = line.partition("policy=")
    words = head.split()
    if len(words) < 2 or words[0] != "register":
        raise ParseError("expected 'register <id> kind=.. primary=.. replicas=.. policy=..'", ln)
    reg_id, fields = words[1], {}
    for w in words[2:]:
        k, eq, v = w.partition("=")
        if not eq or k not in ("kind", "primary", "replicas") or k in fields:
            raise ParseError(f"bad register field {w!r}", ln)
        fields[k] = v
    missing = {"kind", "primary", "replicas"} - set(fields)
    if missing:
        raise ParseError(f"register {reg_id} is missing {', '.join(sorted(missing))}", ln)
    try:
        kind = Kind(fields["kind"])
    except ValueError:
        raise ValidationError(f"unknown register kind {fields['kind']!r}", ln) from None
    primary = _int(fields["primary"], "primary", ln)
    replicas = frozenset(_int(x, "replica", ln) for x in fields["replicas"].split(",") if x)
    try:
        policy = parse_policy(policy_text) if sep else Lasp()
    except InvalidPolicy as e:
        raise ValidationError(f"register {reg_id}: {e}", ln) from None
    if reg_id in d.reg_lines:
        raise ValidationError(f"register {reg_id} declared twice", ln)
    if primary not in replicas:
        raise ValidationError(f"register {reg_id}: primary {primary} is not among its replicas", ln)
    d.reg_lines[reg_id] = ln
    d.registers.append(Register(reg_id, kind, primary, replicas, policy))


def _parse_workload(d: _Draft, line: str, ln: int) -> None:
    m = re.match(r"(\S+)\s+(\S+)\s+(?:deadline=(\S+)\s+)?(.+)\Z", line)
    if not m:
        raise ParseError("expected '<time> <node> [deadline=<ms>] <program>'", ln)
    t = _int(m.group(1), "time", ln)
    node = _int(m.group(2), "node", ln)
    deadline = _int(m.group(3), "deadline", ln, minimum=1) if m.group(3) else None
    try:
        program = parse(m.group(4))
    except CapError as e:
        raise ParseError(f"bad program: {e}", ln) from None
    if free_vars(program):
        raise ValidationError(f"program has free variable(s) {sorted(free_vars(program))}", ln)
    d.workload.append(WorkloadOp(t, node, program, deadline, ln))


def _parse_fault(d: _Draft, words: list[str], ln: int) -> None:
    if len(words) < 2:
        raise ParseError("expected '<time> <fault> ...'", ln)
    t, kind, rest = _int(words[0], "time", ln), words[1], words[2:]
    if kind == "partition":
        groups, cur = [], []
        for w in rest + ["|"]:
            if w == "|":
                groups.append(cur)
                cur = []
            else:
                cur.append(_int(w, "node", ln))
        d.faults.append(Fault(t, kind, groups=tuple(tuple(g) for g in groups), line=ln))
    elif kind == "heal":
        if rest:
            raise ParseError("heal takes no arguments", ln)
        d.faults.append(Fault(t, kind, line=ln))
    elif kind in ("crash", "recover"):
        if len(rest) != 1:
            raise ParseError(f"expected '<time> {kind} <node>'", ln)
        d.faults.append(Fault(t, kind, node=_int(rest[0], "node", ln), line=ln))
    elif kind == "reconfigure":
        if len(rest) < 2:
            raise ParseError("expected '<time> reconfigure <register> <policy>'", ln)
        try:
            policy = parse_policy(" ".join(rest[1:]))
        except InvalidPolicy as e:
            raise ValidationError(str(e), ln) from None
        d.faults.append(Fault(t, kind, reg=rest[0], policy=policy, line=ln))
    else:
        raise ParseError(f"unknown fault {kind!r}", ln)


def _parse_run(d: _Draft, words: list[str], ln: int) -> None:
    if len(words) != 2 or words[0] not in ("horizon", "seed", "gossip"):
        raise ParseError("expected 'horizon <ms>', 'seed <n>' or 'gossip <ms>'", ln)
    if words[0] in d.run:
        raise ParseError(f"{words[0]} given twice", ln)
    d.run[words[0]] = _int(words[1], words[0], ln, minimum=1 if words[0] == "gossip" else 0)


def loads(text: str, name: str = "scenario") -> Scenario:
    """Parse and validate scenario text."""
    d = _Draft()
    section = None
    seen = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", ln)
            if section in seen:
                raise ParseError(f"section [{section}] appears twice", ln)
            seen.add(section)
            continue
        if section is None:
            raise ParseError("declaration before the first [section]", ln)
        words = line.split()
        if section == "nodes":
            _parse_nodes(d, words, ln)
        elif section == "links":
            _parse_links(d, words, ln)
        elif section == "registers":
            _parse_register(d, line, ln)
        elif section == "workload":
            _parse_workload(d, line, ln)
        elif section == "faults":
            _parse_fault(d, words, ln)
        else:
            _parse_run(d, words, ln)
    return _validate(d, name)


def _validate(d: _Draft, name: str) -> Scenario:
    if d.n_nodes is None:
        raise ValidationError("missing [nodes] count")
    n = d.n_nodes
    horizon = d.run.get("horizon", 1000)

    def node_ok(node, ln, what="node"):
        if not 0 <= node < n:
            raise ValidationError(f"{what} {node} out of range 0..{n - 1}", ln)

    for r in d.registers:
        for x in r.replicas:
            node_ok(x, d.reg_lines[r.id], "replica")
    known = {r.id for r in d.registers}
    for w in d.workload:
        node_ok(w.node, w.line)
        if w.time > horizon:
            raise ValidationError(f"op at {w.time} is past the horizon {horizon}", w.line)
        unknown = sorted(registers(w.program) - known)
        if unknown:
            raise ValidationError(f"unknown register(s) {', '.join(unknown)}", w.line)
    for f in d.faults:
        if f.time > horizon:
            raise ValidationError(f"fault at {f.time} is past the horizon {horizon}", f.line)
        if f.kind == "partition":
            try:
                validate_groups(f.groups, n)
            except CapError as e:
                raise ValidationError(str(e), f.line) from None
        elif f.node is not None:
            node_ok(f.node, f.line)
        elif f.kind == "reconfigure" and f.reg not in known:
            raise ValidationError(f"unknown register {f.reg}", f.line)
    link = LinkModel(d.latency or Fixed(1), d.drop)
    return Scenario(
        n_nodes=n,
        link=link,
        registers=tuple(d.registers),
        workload=tuple(sorted(d.workload, key=lambda w: (w.time, w.line))),
        faults=tuple(sorted(d.faults, key=lambda f: (f.time, f.line))),
        horizon=horizon,
        seed=d.run.get("seed", 0),
        gossip=d.run.get("gossip"),
        name=name,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Read, parse and validate a scenario file."""
    path = Path(path)
    return loads(path.read_text(), name=path.stem)
