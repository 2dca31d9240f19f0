"""Exception types shared across the package."""


class PlexError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PlexError):
    """Operands have incompatible shapes or dimensions."""


class DegenerateVectorError(PlexError):
    """A vector has (near-)zero norm where a direction is required."""


class DataFormatError(PlexError):
    """A file or record does not conform to its declared format."""


class DivergenceError(PlexError):
    """Training produced a non-finite loss.

    ``epoch`` records where the divergence was detected.
    """

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch
