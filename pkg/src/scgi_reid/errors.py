"""Exception hierarchy shared across the package."""


class ScgiError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(ScgiError):
    """A documented precondition or API contract was violated."""


class ShapeError(ScgiError):
    """Tensor dimensions are incompatible with the requested operation."""


class ParseError(ScgiError):
    """A file could not be parsed; the message names the offending line."""


class ValidationError(ScgiError):
    """Parsed data violates a schema constraint (e.g. duplicate ids)."""


class TrainingDiverged(ScgiError):
    """Training produced a non-finite loss; the message names the tensor."""
