"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical routine failed (CLI exit code 2)."""


class IntegratorError(NumericalError):
    """Norm drift stayed above tolerance after step halving."""


class GaugeError(NumericalError):
    """Parallel transport hit a (near-)vanishing overlap."""


class DegenerateModelError(NumericalError):
    """The cascade operator has no dominant eigenvalue."""
