"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map error
classes to distinct process statuses.
"""


class MCMCSelError(Exception):
    exit_code = 1


class ParseError(MCMCSelError):
    exit_code = 2


class ValidationError(MCMCSelError, ValueError):
    exit_code = 3


class ConfigMismatch(ValidationError):
    exit_code = 3


class DimensionMismatch(MCMCSelError, ValueError):
    exit_code = 3


class OutOfSupport(MCMCSelError, ValueError):
    exit_code = 4


class NotDirectlySamplable(MCMCSelError, TypeError):
    exit_code = 3


class DegenerateCovariance(MCMCSelError, ArithmeticError):
    exit_code = 4


class KTooLarge(MCMCSelError, ValueError):
    exit_code = 5


class ZeroDistance(MCMCSelError, ArithmeticError):
    exit_code = 5


class GammaPole(MCMCSelError, ValueError):
    exit_code = 5


class NonPositiveM(MCMCSelError, ArithmeticError):
    exit_code = 5


class TooFewPoints(MCMCSelError, ValueError):
    exit_code = 5


class NonIntegrable(MCMCSelError, ArithmeticError):
    exit_code = 6


class AlphaOutOfTheoremRange(MCMCSelError, ValueError):
    exit_code = 3


class IoError(MCMCSelError, OSError):
    exit_code = 7
