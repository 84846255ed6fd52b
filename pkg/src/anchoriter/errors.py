"""Exception types shared across the package."""


class AnchorError(ValueError):
    """Base class for validation failures raised by this package."""


class DimensionError(AnchorError):
    pass


class NonFiniteError(AnchorError):
    pass


class InfeasibleError(AnchorError):
    """An affine system ``Ax = b`` has no solution within tolerance."""


class NotAProjectionError(AnchorError):
    pass


class FixedPointError(AnchorError):
    """A map in a run configuration does not fix the reference point."""

    def __init__(self, message, where=None, index=None):
        super().__init__(message)
        self.where = where
        self.index = index


class NestingError(AnchorError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class CertificationPreconditionError(AnchorError):
    pass


class ProgramError(AnchorError):
    """A Manuscript Computer program failed load-time verification."""


class EncodingError(AnchorError):
    pass
