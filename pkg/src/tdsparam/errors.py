"""Exception hierarchy shared by all tdsparam modules."""


class TDSError(Exception):
    """Base class for every error raised by tdsparam."""


class ExprSyntaxError(TDSError):
    """Raised by the expression parser.

    ``offset`` is a byte offset into the UTF-8 encoded input and
    ``expected`` the set of token kinds that would have been accepted.
    """

    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)


class EvaluationError(TDSError):
    pass


class UnboundVariableError(EvaluationError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unbound variable {name!r}")


class ExprZeroDivisionError(EvaluationError):
    def __init__(self, node_text):
        self.node_text = node_text
        super().__init__(f"division by zero in ({node_text})")


class IntervalError(EvaluationError):
    pass


class NegativeDelayError(EvaluationError):
    """A delay expression evaluated below zero (outside the retarded class)."""


class StructureError(TDSError):
    """Characteristic function text cannot be brought into quasi-polynomial form."""


class SweepError(TDSError):
    """Frequency sweep could not certify its high-frequency truncation."""


class PreconditionError(TDSError):
    """f(jw, tau) vanishes (numerically) on the imaginary axis at the start point."""


class ZeroOnContourError(TDSError):
    pass


class WindingError(TDSError):
    """Argument-principle winding did not settle to an integer."""


class ModelError(TDSError):
    """Invalid distributed-delay state model."""
