"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its valid domain."""


class ShapeError(ValueError):
    """Array shapes do not agree."""


class GeometryError(ValueError):
    """A region falls outside the image bounds."""


class SizeError(ValueError):
    """An image is too small for the requested analysis."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class TrainingError(RuntimeError):
    """Training diverged."""
