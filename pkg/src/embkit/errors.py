"""Exception hierarchy.

Everything derived from :class:`EmbkitError` is a problem with the caller's
input (bad file, bad parameter, degenerate data). The CLI maps these to exit
code 1; anything else escaping the library is treated as an internal error.
"""


class EmbkitError(ValueError):
    """Base class for input, parameter and data errors."""


class FormatError(EmbkitError):
    """A file does not follow the EMB1 / JSONL layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BundleValidationError(EmbkitError):
    """Referential-integrity failure inside a task bundle."""

    def __init__(self, message, lines=()):
        self.lines = tuple(lines)
        if self.lines:
            shown = ", ".join(str(n) for n in self.lines[:20])
            more = "" if len(self.lines) <= 20 else f" (+{len(self.lines) - 20} more)"
            message = f"{message} [lines {shown}{more}]"
        super().__init__(message)


class InvalidParameterError(EmbkitError):
    pass


class DegenerateInputError(EmbkitError):
    """Data for which the requested quantity is undefined (zero norm, one class, ...)."""


class InsufficientDataError(DegenerateInputError):
    pass


class NonIdentifiableError(DegenerateInputError):
    pass


class StabilityError(EmbkitError):
    pass


class ConnectivityError(EmbkitError):
    def __init__(self, n_components):
        super().__init__(
            f"neighborhood graph is disconnected ({n_components} components); "
            "increase n_neighbors"
        )
        self.n_components = n_components


class UnsupportedOperationError(EmbkitError):
    pass


class ContractError(EmbkitError):
    """Arguments violate an operation's preconditions (shape mismatch, asymmetry)."""
