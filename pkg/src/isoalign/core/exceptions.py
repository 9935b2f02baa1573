"""
Exceptions for isoalign
Everything raised on purpose derives from IsoAlignError so callers (the CLI in
particular) have one place to catch and map errors to exit codes.
"""

from typing import Optional, Sequence


class IsoAlignError(Exception):
    # general container for errors
    pass


class FormatError(IsoAlignError):
    # raised when EMB1/MAP1 bytes are malformed; offset points at the offending byte
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class UnsupportedVersionError(FormatError):
    # raised when the header version field is not one we can read
    pass


class ContractError(IsoAlignError):
    # raised when an input violates an operation's preconditions
    pass


class ValidationError(ContractError):
    # raised on invalid values (non-finite entries, bad parameters, broken invariants)
    pass


class StructuralError(ContractError):
    # raised when parts of a record disagree (label count vs rows, sidecar vs payload)
    pass


class DimensionMismatchError(ContractError):
    # raised when matrix shapes are incompatible
    pass


class PairingError(ContractError):
    # raised when two sets meant to be paired row-by-row differ in size or labels
    pass


class MissingLabelsError(ContractError):
    # raised when an operation needs labels and the set has none
    pass


class UnknownClassError(ContractError):
    # raised when a class id is requested that the data does not contain
    pass


class NumericalError(IsoAlignError):
    # general container for numerical failures
    pass


class DegenerateRowError(NumericalError):
    # raised when rows (or class means) are too close to zero to normalize
    def __init__(self, message: str, rows: Sequence[int] = ()):
        self.rows = [int(r) for r in rows]
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:20])
            more = "" if len(self.rows) <= 20 else f" (+{len(self.rows) - 20} more)"
            message = f"{message}: rows [{shown}]{more}"
        super().__init__(message)


class IllConditionedError(NumericalError):
    # raised when an operator is singular or rank deficient; carries its smallest singular value
    def __init__(self, message: str, sigma_min: float):
        self.sigma_min = float(sigma_min)
        super().__init__(f"{message} (sigma_min={self.sigma_min:.3e})")


class NotInvertibleError(NumericalError):
    # raised when an inverse is requested for a map that has none
    pass


class SVDFailureError(NumericalError):
    # raised when LAPACK fails to converge
    pass


class InfeasibleScenarioError(IsoAlignError):
    # raised when a synthetic generator cannot meet the requested targets
    pass


class BoundViolationError(IsoAlignError):
    # raised when a theorem check fails on an instance that satisfies its preconditions
    def __init__(self, message: str, seed: Optional[int] = None, report: Optional[dict] = None):
        self.seed = seed
        self.report = report or {}
        if seed is not None:
            message = f"{message} (seed={seed})"
        super().__init__(message)
