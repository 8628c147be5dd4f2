"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data errors 2,
numerical failures 3.
"""


class SpikeforgeError(Exception):
    """Base class for all package-specific errors."""


class DataError(SpikeforgeError):
    """A file or on-disk structure is missing, malformed, or inconsistent.

    Where possible the message carries the offending file and line.
    """

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class NumericalError(SpikeforgeError):
    """A numerical routine encountered non-finite values or failed to make progress."""


class UsageError(SpikeforgeError):
    """Invalid command-line invocation."""
