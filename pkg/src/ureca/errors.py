"""Exception hierarchy. The CLI maps these onto exit codes."""


class UrecaError(Exception):
    """Base class for all errors raised by this package."""


class InputError(UrecaError, ValueError):
    """Bad user input: malformed files, out-of-range indices, invalid parameters."""


class DimensionError(InputError):
    pass


class IngestError(InputError):
    """A dataset file failed to load. Carries the offending path and line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class InvariantError(UrecaError, RuntimeError):
    """An internal invariant was violated during computation."""
