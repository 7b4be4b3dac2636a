"""Exception types raised across the package."""


class UnstableConfigError(ValueError):
    """The offered load is not below the service rate at the requested power."""


class InfeasibleError(ValueError):
    """No operating point in the performance region satisfies the requested bounds."""

    def __init__(self, message, violated=None):
        super().__init__(message)
        self.violated = violated


class CapabilityError(ValueError):
    """The problem size exceeds what a brute-force routine is allowed to enumerate."""


class DataIntegrityError(ValueError):
    """A frame record is internally inconsistent (negative delay, busy time above frame time, ...)."""


class DivergenceError(RuntimeError):
    """A simulation or virtual queue left its sane operating range."""
