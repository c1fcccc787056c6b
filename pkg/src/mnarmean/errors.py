"""Exception taxonomy. Each error carries a stable machine-readable code
used by the CLI when emitting error JSON."""


class MnarError(Exception):
    """Base class for all estimation-related errors."""

    code = "INTERNAL"


class DataIOError(MnarError):
    code = "IO"


class ParseError(MnarError):
    code = "PARSE"


class IdentifiabilityError(MnarError):
    code = "IDENTIFIABILITY"


class SeparationError(MnarError):
    code = "SEPARATION"


class SingularDesignError(MnarError):
    code = "SINGULAR"


class MgfOverflowError(MnarError):
    code = "OVERFLOW"


class NonConvergenceError(MnarError):
    code = "NONCONVERGENCE"


class DegenerateDataError(MnarError):
    """Raised when the data admit no estimate (e.g. all rows observed,
    or all rows missing)."""

    code = "DEGENERATE"


class UsageError(MnarError):
    code = "USAGE"
