"""Exception types raised across the package."""


class CapGapError(Exception):
    pass


class DomainError(CapGapError, ValueError):
    """An argument lies outside the domain of a function."""


class ConfigurationError(CapGapError, ValueError):
    """Mismatched shapes, unknown keys, missing keys and similar set-up mistakes."""


class PreconditionError(CapGapError, ValueError):
    pass


class ModelError(CapGapError, ValueError):
    """A model is degenerate (no miners, zero rate, ...)."""


class InfeasibleTargetError(CapGapError, ValueError):
    def __init__(self, target, interval):
        self.target = target
        self.interval = interval
        lo, hi = interval
        super().__init__(
            f"target payoff {target:g} is outside the controllable range [{lo:g}, {hi:g}]"
        )


class DegenerateTargetError(CapGapError, ValueError):
    """No ZD slope of usable magnitude keeps the policy inside [0, 1]."""


class ConvergenceError(CapGapError, RuntimeError):
    pass


class NotReadyError(CapGapError, RuntimeError):
    """Raised when a statistic is requested before any data was observed."""
