"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid user input (bad parameters, malformed files, disconnected graphs)."""


class NumericalError(RuntimeError):
    """An eigensolver or linear solver did not converge."""


class HierarchyError(RuntimeError):
    """Dyadic cube construction failed its postconditions."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
