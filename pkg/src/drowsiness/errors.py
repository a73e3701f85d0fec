"""Exception hierarchy shared across the package."""


class DrowsinessError(Exception):
    """Base class for all package errors."""


class ConfigError(DrowsinessError, ValueError):
    """Invalid configuration or argument value."""


class DataError(DrowsinessError, ValueError):
    """Malformed, corrupt or inconsistent data (containers, recordings, features)."""


class DivergenceError(DrowsinessError, ArithmeticError):
    """Training produced a non-finite loss."""


class DegenerateSpectrumError(DrowsinessError, ArithmeticError):
    """Leading eigenvector is not unique (tied top eigenvalue) or did not converge."""
