class ContractViolation(ValueError):
    """An operation was called outside its preconditions."""


class EmptyObservationError(ContractViolation):
    """The observation holds no QUERY event, so it cannot be segmented."""


class DegenerateDistributionError(ValueError):
    """Latency samples collapse to a single value; no threshold exists."""


class ParseError(ValueError):
    """Malformed interchange document."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
