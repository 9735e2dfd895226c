"""Exception families raised across the package.

Each family maps to one CLI exit code.
"""


class AQFusionError(Exception):
    exit_code = 1


class ConfigurationError(AQFusionError):
    """Inconsistent dimensions, bad flags or unusable configuration."""

    exit_code = 10


class FormatError(AQFusionError):
    """Malformed input file (header, payload, table)."""

    exit_code = 11


class SingularCorrectionError(AQFusionError):
    """1 + Lc too close to zero for the inversion to be meaningful."""

    exit_code = 12

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class IdentifiabilityError(AQFusionError):
    """Design matrix is rank deficient for the requested estimator."""

    exit_code = 13

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SamplerError(AQFusionError):
    exit_code = 14


class DataError(AQFusionError):
    """Data present but unusable (empty registry, device outside extent...)."""

    exit_code = 15
