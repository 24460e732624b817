"""Exception types shared across the package, with CLI exit codes."""


class FrustumDetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FrustumDetError):
    """Invalid configuration value, unknown key, or inconsistent preset."""

    exit_code = 2


class MissingFileError(FrustumDetError):
    """A required input file or directory does not exist."""

    exit_code = 3


class MalformedFileError(FrustumDetError):
    """An input file exists but violates its format contract."""

    exit_code = 4


class ShapeError(FrustumDetError):
    """Tensor or feature-map shape mismatch; message names both shapes."""

    exit_code = 5


class GenerationError(FrustumDetError):
    """Synthetic scene generation could not satisfy its constraints."""

    exit_code = 6
