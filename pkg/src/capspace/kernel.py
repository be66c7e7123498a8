"""Call-by-value lambda calculus with register dereference and update.

Pure forms reduce immediately. ``Deref`` and ``Store`` suspend the
evaluation and hand an :class:`Access` request to whoever is driving it;
the driver synchronizes according to the register's policy and resumes
the evaluation with the observed value. A suspended evaluation is an
ordinary Python object (a generator underneath), so it can sit in the
simulator's queue for as long as the network makes it wait.

Concrete syntax::

    5  true  x
    (lam x body)          (app f a [b ...])       (let x e body)
    (+ a b) (- a b) (* a b) (< a b) (<= a b) (= a b) (not a) (and a b) (or a b)
    (set 1 2 3) (union s t) (member x s) (size s) (map f s) (filter p s)
    (deref r1)
    (store r1 (inc)) (store r1 (dec)) (store r1 (add e))
    (store r1 (remove e)) (store r1 (assign e))
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Generator, Optional, Union

from .errors import EvalTypeError, ProgramSyntaxError, UnboundVariable
from .lattice import render_element

# ---------------------------------------------------------------------------
# Syntax


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Lam:
    param: str
    body: "Expr"


@dataclass(frozen=True)
class App:
    fn: "Expr"
    arg: "Expr"


@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Prim:
    op: str
    args: tuple


@dataclass(frozen=True)
class Deref:
    reg: str


@dataclass(frozen=True)
class Store:
    reg: str
    op: str  # inc | dec | add | remove | assign
    arg: Optional["Expr"] = None


Expr = Union[Var, Lam, App, Lit, Prim, Deref, Store]

STORE_OPS = {"inc": 0, "dec": 0, "add": 1, "remove": 1, "assign": 1}

PRIM_ARITY = {
    "+": 2, "-": 2, "*": 2, "<": 2, "<=": 2, "=": 2,
    "not": 1, "and": 2, "or": 2,
    "union": 2, "member": 2, "size": 1, "map": 2, "filter": 2,
    "set": None,
}


@dataclass(frozen=True)
class Closure:
    param: str
    body: Expr
    env: tuple  # ((name, value), ...), innermost first


def render_value(v: Any) -> str:
    if isinstance(v, Closure):
        return f"<closure {v.param}>"
    if isinstance(v, frozenset):
        return render_element(v)
    return render_element(v)


# ---------------------------------------------------------------------------
# Parsing


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_INT = re.compile(r"-?\d+\Z")


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ProgramSyntaxError(f"cannot tokenize at {text[pos:]!r}")
        out.append(m.group(m.lastindex))
        pos = m.end()
    return out


def _read(tokens: list[str], i: int):
    if i >= len(tokens):
        raise ProgramSyntaxError("unexpected end of program")
    tok = tokens[i]
    if tok == ")":
        raise ProgramSyntaxError("unexpected ')'")
    if tok != "(":
        return tok, i + 1
    items, i = [], i + 1
    while True:
        if i >= len(tokens):
            raise ProgramSyntaxError("missing ')'")
        if tokens[i] == ")":
            return items, i + 1
        item, i = _read(tokens, i)
        items.append(item)


def parse(text: str) -> Expr:
    """Parse one program in s-expression syntax."""
    tokens = _tokenize(text)
    if not tokens:
        raise ProgramSyntaxError("empty program")
    tree, end = _read(tokens, 0)
    if end != len(tokens):
        raise ProgramSyntaxError(f"trailing input after program: {' '.join(tokens[end:])}")
    return _build(tree)


def _symbol(tree, what: str) -> str:
    if not isinstance(tree, str) or _INT.match(tree) or tree in ("true", "false"):
        raise ProgramSyntaxError(f"expected {what}, got {tree!r}")
    return tree


def _build(tree) -> Expr:
    if isinstance(tree, str):
        if _INT.match(tree):
            return Lit(int(tree))
        if tree == "true":
            return Lit(True)
        if tree == "false":
            return Lit(False)
        if tree == "nil":
            return Lit(None)
        return Var(tree)
    if not tree:
        raise ProgramSyntaxError("empty application ()")
    head, rest = tree[0], tree[1:]
    if not isinstance(head, str):
        raise ProgramSyntaxError("use (app f a) to apply a computed function")
    if head in ("lam", "lambda"):
        if len(rest) != 2:
            raise ProgramSyntaxError("(lam x body)")
        return Lam(_symbol(rest[0], "parameter name"), _build(rest[1]))
    if head == "app":
        if len(rest) < 2:
            raise ProgramSyntaxError("(app f a ...)")
        e = _build(rest[0])
        for a in rest[1:]:
            e = App(e, _build(a))
        return e
    if head == "let":
        if len(rest) != 3:
            raise ProgramSyntaxError("(let x e body)")
        return App(Lam(_symbol(rest[0], "let name"), _build(rest[2])), _build(rest[1]))
    if head == "deref":
        if len(rest) != 1:
            raise ProgramSyntaxError("(deref reg)")
        return Deref(_symbol(rest[0], "register id"))
    if head == "store":
        if len(rest) != 2 or not isinstance(rest[1], list) or not rest[1]:
            raise ProgramSyntaxError("(store reg (op [arg]))")
        reg = _symbol(rest[0], "register id")
        op, *args = rest[1]
        if op not in STORE_OPS or len(args) != STORE_OPS[op]:
            raise ProgramSyntaxError(f"bad store op {rest[1]!r}")
        return Store(reg, op, _build(args[0]) if args else None)
    if head in PRIM_ARITY:
        arity = PRIM_ARITY[head]
        if arity is not None and len(rest) != arity:
            raise ProgramSyntaxError(f"({head} ...) takes {arity} argument(s)")
        return Prim(head, tuple(_build(a) for a in rest))
    raise ProgramSyntaxError(f"unknown form {head!r}")


def render_expr(e: Expr) -> str:
    if isinstance(e, Lit):
        return render_element(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lam):
        return f"(lam {e.param} {render_expr(e.body)})"
    if isinstance(e, App):
        return f"(app {render_expr(e.fn)} {render_expr(e.arg)})"
    if isinstance(e, Prim):
        return "(" + " ".join([e.op, *(render_expr(a) for a in e.args)]) + ")"
    if isinstance(e, Deref):
        return f"(deref {e.reg})"
    if isinstance(e, Store):
        inner = e.op if e.arg is None else f"{e.op} {render_expr(e.arg)}"
        return f"(store {e.reg} ({inner}))"
    raise TypeError(f"not an expression: {e!r}")


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Lam):
        return free_vars(e.body) - {e.param}
    if isinstance(e, App):
        return free_vars(e.fn) | free_vars(e.arg)
    if isinstance(e, Prim):
        return frozenset().union(*(free_vars(a) for a in e.args))
    if isinstance(e, Store) and e.arg is not None:
        return free_vars(e.arg)
    return frozenset()


def registers(e: Expr) -> frozenset:
    """Register ids mentioned anywhere in ``e``."""
    if isinstance(e, Deref):
        return frozenset({e.reg})
    if isinstance(e, Store):
        return frozenset({e.reg}) | (registers(e.arg) if e.arg is not None else frozenset())
    if isinstance(e, Lam):
        return registers(e.body)
    if isinstance(e, App):
        return registers(e.fn) | registers(e.arg)
    if isinstance(e, Prim):
        return frozenset().union(*(registers(a) for a in e.args))
    return frozenset()


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class Access:
    """An interposition point: the evaluation is waiting on a register."""

    kind: str  # "read" | "write"
    reg: str
    op: Optional[str] = None
    arg: Any = None


def _lookup(env: tuple, name: str):
    for k, v in env:
        if k == name:
            return v
    raise UnboundVariable(f"free variable {name!r}")


def _int(v, op):
    if isinstance(v, bool) or not isinstance(v, int):
        raise EvalTypeError(f"({op} ...) expects integers, got {render_value(v)}")
    return v


def _bool(v, op):
    if not isinstance(v, bool):
        raise EvalTypeError(f"({op} ...) expects booleans, got {render_value(v)}")
    return v


def _set(v, op):
    if not isinstance(v, frozenset):
        raise EvalTypeError(f"({op} ...) expects a set, got {render_value(v)}")
    return v


def _closure(v, op):
    if not isinstance(v, Closure):
        raise EvalTypeError(f"({op} ...) expects a function, got {render_value(v)}")
    return v


Step = Generator[Access, Any, Any]


def _eval(e: Expr, env: tuple) -> Step:
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        return _lookup(env, e.name)
    if isinstance(e, Lam):
        return Closure(e.param, e.body, env)
    if isinstance(e, App):
        f = yield from _eval(e.fn, env)
        a = yield from _eval(e.arg, env)
        return (yield from _apply(f, a))
    if isinstance(e, Prim):
        args = []
        for a in e.args:  # left to right
            args.append((yield from _eval(a, env)))
        return (yield from _prim(e.op, args))
    if isinstance(e, Deref):
        return (yield Access("read", e.reg))
    if isinstance(e, Store):
        arg = None
        if e.arg is not None:
            arg = yield from _eval(e.arg, env)
        return (yield Access("write", e.reg, e.op, arg))
    raise TypeError(f"not an expression: {e!r}")


def _apply(f, a) -> Step:
    f = _closure(f, "app")
    return (yield from _eval(f.body, ((f.param, a),) + f.env))


def _prim(op: str, args: list) -> Step:
    if op == "+":
        return _int(args[0], op) + _int(args[1], op)
    if op == "-":
        return _int(args[0], op) - _int(args[1], op)
    if op == "*":
        return _int(args[0], op) * _int(args[1], op)
    if op == "<":
        return _int(args[0], op) < _int(args[1], op)
    if op == "<=":
        return _int(args[0], op) <= _int(args[1], op)
    if op == "=":
        return args[0] == args[1] and type(args[0]) is type(args[1])
    if op == "not":
        return not _bool(args[0], op)
    if op == "and":
        return _bool(args[0], op) and _bool(args[1], op)
    if op == "or":
        return _bool(args[0], op) or _bool(args[1], op)
    if op == "set":
        return frozenset(_int(a, op) for a in args)
    if op == "union":
        return _set(args[0], op) | _set(args[1], op)
    if op == "member":
        return _int(args[0], op) in _set(args[1], op)
    if op == "size":
        return len(_set(args[0], op))
    if op == "map":
        f, s = _closure(args[0], op), _set(args[1], op)
        out = []
        for x in sorted(s):
            out.append((yield from _apply(f, x)))
        return frozenset(_int(v, op) for v in out)
    if op == "filter":
        p, s = _closure(args[0], op), _set(args[1], op)
        kept = []
        for x in sorted(s):
            if _bool((yield from _apply(p, x)), op):
                kept.append(x)
        return frozenset(kept)
    raise EvalTypeError(f"unknown primitive {op!r}")


class Evaluation:
    """A resumable evaluation of one closed program.

    ``start()`` and ``resume(value)`` run until the next register access
    (returned as an :class:`Access`) or until the program finishes, in
    which case they return None and ``value`` holds the result. Errors
    raised by the program propagate out of these calls.
    """

    def __init__(self, program: Expr):
        self.program = program
        self.done = False
        self.value: Any = None
        self._gen = _eval(program, ())
        self._started = False

    def start(self) -> Optional[Access]:
        if self._started:
            raise RuntimeError("evaluation already started")
        self._started = True
        return self._advance(None)

    def resume(self, value: Any) -> Optional[Access]:
        if not self._started or self.done:
            raise RuntimeError("nothing to resume")
        return self._advance(value)

    def _advance(self, value: Any) -> Optional[Access]:
        try:
            return self._gen.send(value)
        except StopIteration as stop:
            self.done = True
            self.value = stop.value
            return None


def reduce(program: Expr | str) -> Any:
    """Evaluate a register-free program directly."""
    if isinstance(program, str):
        program = parse(program)
    ev = Evaluation(program)
    access = ev.start()
    if access is not None:
        raise EvalTypeError(f"register access {access.kind} {access.reg} in a pure context")
    return ev.value


# ---------------------------------------------------------------------------
# Outcomes


@dataclass(frozen=True)
class Completed:
    value: Any
    finish: int


@dataclass(frozen=True)
class Blocked:
    reason: str
    since: int


@dataclass(frozen=True)
class Failed:
    error: str


Outcome = Union[Completed, Blocked, Failed]


def evaluate(program: Expr | str, node: int, start: int, runtime, until: Optional[int] = None) -> Outcome:
    """Run one program at ``node`` from time ``start`` on a runtime.

    The runtime's simulator is advanced until the program finishes or
    ``until`` (default: start + 60 s of simulated time) passes, whichever
    comes first; a program still waiting then is reported as Blocked.
    """
    if isinstance(program, str):
        program = parse(program)
    op = runtime.submit(program, node, start)
    horizon = until if until is not None else start + 60_000
    runtime.sim.run_until(max(horizon, runtime.sim.now), stop=lambda: op.finished)
    return op.outcome()
