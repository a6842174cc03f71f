"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SctError(Exception):
    """Base class for all errors raised by sctkit."""


class EmptySource(SctError, ValueError):
    pass


class ParseFailed(SctError):
    pass


class RowOutOfRange(SctError, IndexError):
    pass


class UnknownNode(SctError, KeyError):
    pass


class InvalidTree(SctError):
    pass


class ProviderUnavailable(SctError):
    pass


class CacheMiss(SctError):
    pass


class MalformedResponse(SctError):
    pass


class UnterminatedCommentBlock(SctError, ValueError):
    pass


class EmptyInput(SctError, ValueError):
    pass


class DimensionMismatch(SctError, ValueError):
    pass


class MalformedLine(SctError, ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingField(SctError, KeyError):
    def __init__(self, line_no: int, field: str):
        super().__init__(f"line {line_no}: missing field {field!r}")
        self.line_no = line_no
        self.field = field

    def __str__(self) -> str:
        return self.args[0]


class TooFewRecords(SctError, ValueError):
    pass


class IdMismatch(SctError):
    pass


class NonBinaryPrediction(SctError, ValueError):
    pass
