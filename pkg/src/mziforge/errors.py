"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition (shape, finiteness, unitarity...)."""


class RangeError(ValueError):
    """A scalar lies outside the physically meaningful range of an operation."""


class SingularityError(ValueError):
    """A relative quantity was requested where its reference vanishes."""

    def __init__(self, message: str, entry: str | None = None):
        super().__init__(message)
        self.entry = entry
