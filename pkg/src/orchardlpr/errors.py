"""Exception types shared across the package."""


class DataError(Exception):
    """Invalid or missing input data (files, shapes, malformed records)."""


class NumericError(Exception):
    """Numerical failure: non-finite gradients, NaN loss, diverged state."""
