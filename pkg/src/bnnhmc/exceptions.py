"""Exception types shared across the package."""


class NonFiniteError(ArithmeticError):
    """A log-density, gradient or integrator state became NaN or infinite."""


class DegenerateSubspaceError(ValueError):
    """Three anchor points do not span a two-dimensional affine plane."""


class DataFormatError(ValueError):
    """A data file could not be parsed."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
