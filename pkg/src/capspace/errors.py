"""Exception hierarchy shared by every layer of the workbench."""

from __future__ import annotations


class CapError(Exception):
    """Base class for all errors raised by capspace."""


# lattice
class LatticeError(CapError):
    pass


class KindMismatch(LatticeError):
    pass


class InvalidOp(LatticeError):
    pass


class InvalidKind(LatticeError):
    pass


# kernel
class EvalError(CapError):
    pass


class UnboundRegister(EvalError):
    pass


class UnboundVariable(EvalError):
    pass


class EvalTypeError(EvalError):
    """A primitive or application was used on a value of the wrong shape."""


class ProgramSyntaxError(EvalError):
    """Malformed s-expression program text."""


# simnet
class PartitionError(CapError):
    pass


class OverlappingGroups(PartitionError):
    pass


# replica
class ReplicaError(CapError):
    pass


class NotAReplica(ReplicaError):
    pass


class NodeDown(ReplicaError):
    pass


# policy
class PolicyError(CapError):
    pass


class InvalidPolicy(PolicyError):
    pass


class StalenessUnsatisfiable(PolicyError):
    pass


# txn
class TxnAborted(CapError):
    pass


# harness
class ScenarioError(CapError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


class TooLarge(CapError):
    pass


class UnknownParameter(CapError):
    pass
