"""Exception hierarchy shared by all stochlab modules."""


class StochlabError(Exception):
    pass


class DomainError(StochlabError, ValueError):
    """Argument outside the domain where a quantity is defined."""


class NumericError(StochlabError, ArithmeticError):
    """A numerical procedure failed to meet its declared tolerance."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class PreconditionError(StochlabError, ValueError):
    pass


class InternalError(StochlabError, RuntimeError):
    """An invariant that holds by construction was violated (a bug)."""


class DegenerateImmersionError(DomainError):
    """The differential of a parametrization lost rank."""
