"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """A function received data that violates its preconditions."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or out of range."""


class ParseError(ValueError):
    """A point-cloud file could not be parsed.

    Carries enough location information (line for text formats, byte
    offset for binary ones) to point at the defect.
    """

    def __init__(self, message, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        prefix = ": ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.offset = offset


class NonFiniteLossError(RuntimeError):
    """A training step produced a NaN/Inf loss term; the step was aborted."""

    def __init__(self, term, value):
        super().__init__(f"non-finite loss term {term!r} = {value!r}; step aborted")
        self.term = term
        self.value = value
