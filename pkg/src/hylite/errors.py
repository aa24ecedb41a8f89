"""Exception types raised across the package.

Every error carries a short class name that the CLI echoes verbatim, so
scripts can match on e.g. ``TruncatedPayload`` in stderr.
"""


class HyliteError(Exception):
    pass


class ShapeMismatch(HyliteError, ValueError):
    pass


class NonFinite(HyliteError, FloatingPointError):
    pass


class EmptyAxis(HyliteError, ValueError):
    pass


class NotScalar(HyliteError, ValueError):
    pass


# data files / splits
class BadMagic(HyliteError, ValueError):
    pass


class DimOverflow(HyliteError, ValueError):
    pass


class TruncatedPayload(HyliteError, ValueError):
    pass


class UnlabeledCenter(HyliteError, ValueError):
    pass


class EmptySplit(HyliteError, ValueError):
    pass


class FractionOutOfRange(HyliteError, ValueError):
    pass


# model / objective / metrics
class InvalidConfig(HyliteError, ValueError):
    pass


class ConfigMismatch(HyliteError, ValueError):
    pass


class TargetOutOfRange(HyliteError, ValueError):
    pass


class NegativeLambda(HyliteError, ValueError):
    pass


class LengthMismatch(HyliteError, ValueError):
    pass


class UnknownAxis(HyliteError, ValueError):
    pass
