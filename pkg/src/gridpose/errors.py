"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError -> 3, OSError -> 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad JSON fields, L % B != 0, ...)."""


class NumericError(ArithmeticError):
    """Numeric failure at runtime, e.g. NaN loss during training."""


class NotDifferentiablePathError(RuntimeError):
    """A non-differentiable operation (hard bin reordering) was placed on a
    path that is being differentiated."""
