"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, FormatError -> 2,
NumericError -> 3.
"""


class NeurocharError(Exception):
    pass


class UsageError(NeurocharError):
    """Caller violated an API contract (bad argument, wrong call order)."""


class ShapeError(UsageError):
    """Tensor dimensions incompatible with the requested operation."""


class FormatError(NeurocharError):
    """Malformed file or on-disk artifact (ARPA, blob, manifest, config)."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class NumericError(NeurocharError):
    """NaN/Inf or other numeric failure in a computation."""
