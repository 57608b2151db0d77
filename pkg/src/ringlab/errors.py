"""Exception hierarchy shared by all ringlab modules."""


class RinglabError(Exception):
    """Base class for all library errors."""


class InvalidSizeError(RinglabError, ValueError):
    pass


class DomainError(RinglabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalFailureError(RinglabError, ArithmeticError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DegenerateSpectrumError(RinglabError, ValueError):
    pass


class NonUniqueEquilibriumError(RinglabError, ValueError):
    def __init__(self, message, nullity):
        super().__init__(message)
        self.nullity = nullity


class UnsupportedTopologyError(RinglabError, ValueError):
    pass


class IntegrationError(RinglabError, RuntimeError):
    """Step size underflow; the problem is likely stiff or singular."""


class DivergenceError(IntegrationError):
    """The state became non-finite during integration."""


class NotPeriodicError(RinglabError, ValueError):
    pass


class PreconditionError(RinglabError, ValueError):
    pass


class ConfigError(RinglabError, ValueError):
    pass
