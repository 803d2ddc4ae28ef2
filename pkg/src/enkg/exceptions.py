"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class NumericalAbort(RuntimeError):
    """A run produced non-finite state or violated a stability limit.

    ``iteration`` and ``index`` locate the failure when known.
    """

    def __init__(self, message, iteration=None, index=None):
        super().__init__(message)
        self.iteration = iteration
        self.index = index


class UnsupportedOperation(NotImplementedError):
    """The operation needs a capability the object does not have."""


class FormatError(ValueError):
    """A grid file is malformed; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """A run configuration is invalid; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key
