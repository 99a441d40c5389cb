"""Exception types shared across the package."""


class BetascopeError(Exception):
    """Base class for all errors raised by betascope."""


class InputError(BetascopeError, ValueError):
    """An argument or input file is malformed or inconsistent."""


class DegenerateInputError(InputError):
    """A computation is undefined for the given input (e.g. zero mass)."""


class CostGuardError(BetascopeError, RuntimeError):
    """The requested computation exceeds a configured size limit."""


class HypothesisError(BetascopeError):
    """A checked precondition of an inequality does not hold."""

    def __init__(self, message, *, atom=None, radius=None, ratio=None):
        super().__init__(message)
        self.atom = atom
        self.radius = radius
        self.ratio = ratio
