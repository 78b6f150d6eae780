"""Exception hierarchy.

``InputError`` covers malformed user input (CLI exit code 2); ``NumericalError``
covers failures of the numerics themselves (CLI exit code 3).
"""
from __future__ import annotations


class AquasiError(Exception):
    """Base class for all package errors."""

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class InputError(AquasiError, ValueError):
    pass


class NumericalError(AquasiError, ArithmeticError):
    pass


class NonConstantRankError(NumericalError):
    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate

    def to_dict(self) -> dict:
        out = super().to_dict()
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        return out


class RankMismatchError(NumericalError):
    def __init__(self, expected: int, found: int):
        super().__init__(f"numerical rank {found} does not match expected rank {expected}")
        self.expected = expected
        self.found = found

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(expected=self.expected, found=self.found)
        return out


class RankDeficientError(NumericalError):
    pass


class RankChangeError(NumericalError):
    def __init__(self, index: int, w_from, w_to, rank_from: int, rank_to: int):
        super().__init__(
            f"rank changes from {rank_from} to {rank_to} between path points {index} and {index + 1}"
        )
        self.index = index
        self.w_from = [float(x) for x in w_from]
        self.w_to = [float(x) for x in w_to]
        self.rank_from = rank_from
        self.rank_to = rank_to

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(
            index=self.index,
            w_from=self.w_from,
            w_to=self.w_to,
            rank_from=self.rank_from,
            rank_to=self.rank_to,
        )
        return out


class ParseError(InputError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(line=self.line, column=self.column)
        return out


class EvaluationError(NumericalError):
    pass


class DomainError(NumericalError):
    """Evaluation requested outside a tabulated function's domain."""


class DivergenceError(NumericalError):
    """Optimizer dropped below the convex lower bound (non-coercive integrand)."""
