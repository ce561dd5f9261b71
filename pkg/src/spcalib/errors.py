"""Exception hierarchy shared by every stage of the calibration pipeline."""

from __future__ import annotations


class CalibrationError(Exception):
    """Base class for all data/analysis errors raised by spcalib."""


class NonPositiveDistance(CalibrationError, ValueError):
    pass


class NegativeDistance(NonPositiveDistance):
    """A drift or nonlinearity model pushed the gap to zero or below."""


class ContactOrBeyond(CalibrationError, ValueError):
    pass


class UnstableResonator(CalibrationError, ValueError):
    """Squared resonance frequency would be zero or negative."""


class InvalidPlan(CalibrationError, ValueError):
    pass


class InvalidConfig(CalibrationError, ValueError):
    pass


class InsufficientPoints(CalibrationError, ValueError):
    pass


class DegenerateDesign(CalibrationError, ValueError):
    pass


class DegenerateSeries(CalibrationError, ValueError):
    pass


class EmptyRun(CalibrationError, ValueError):
    pass


class NotConverged(CalibrationError, RuntimeError):
    pass


class NonFiniteResidual(CalibrationError, FloatingPointError):
    pass


class SingularJacobian(CalibrationError, ValueError):
    pass


class V0Collision(CalibrationError, ValueError):
    """The contact bias fell at or below a fitted PZT voltage."""


class NonPositiveResiduals(CalibrationError, ValueError):
    pass


class SchemaVersionMismatch(CalibrationError, ValueError):
    pass


class ParseError(CalibrationError, ValueError):
    """Malformed run file; carries the 1-based line and column."""

    def __init__(self, line: int, column: int | None, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {reason}")
