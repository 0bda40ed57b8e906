"""Exception hierarchy shared by the solvers and the command line."""


class RotorOptError(Exception):
    """Base class for every error raised by rotoropt."""


class ConfigError(RotorOptError):
    """Invalid run configuration or machine data."""


class GeometryError(ConfigError):
    """Machine geometry that cannot be meshed."""


class SolverError(RotorOptError):
    """A linear or nonlinear solve did not converge or hit a singular matrix."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual

    def __str__(self):
        text = super().__str__()
        if self.residual is not None:
            text += f" (last residual {self.residual:.3e})"
        return text


class TableError(RotorOptError):
    """A precomputed table file is missing, corrupted or incompatible."""
