"""Exception types raised across the package."""

import numpy as np


class InvalidParameterError(ValueError):
    """Model parameters violate their invariants (e.g. sigma2 <= 0)."""


class ConfigError(ValueError):
    """A DPD or optimizer configuration is out of range."""


class InitializationError(RuntimeError):
    """The solver could not evaluate a finite objective at its starting point."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """A J block is singular; ``block`` names which one."""

    def __init__(self, block, message=None):
        self.block = block
        super().__init__(message or f"J block '{block}' is not positive definite")


class NumericalConsistencyError(ArithmeticError):
    """A covariance diagonal came out clearly negative."""


class DegenerateAxisError(ValueError):
    """A penalty axis has an all-zero gradient at the origin, so no grid can be built."""


class SelectionError(RuntimeError):
    """Every candidate on the penalty grid was disqualified."""
