"""Exception hierarchy shared by all spincool modules."""


class SpinCoolError(Exception):
    """Base class for domain errors (CLI exit code 3)."""


class UnknownSpecies(SpinCoolError, KeyError):
    pass


class InvalidOverride(SpinCoolError, ValueError):
    pass


class ConfigError(SpinCoolError, ValueError):
    """Malformed species config file; message carries the line number."""


class InvalidSpins(SpinCoolError, ValueError):
    pass


class QuadrupoleUndefined(SpinCoolError, ValueError):
    pass


class NotHermitian(SpinCoolError, ValueError):
    pass


class NotApplicable(SpinCoolError, ValueError):
    pass


class LabelAmbiguity(SpinCoolError):
    pass


class NoSuchState(SpinCoolError, KeyError):
    pass


class DimensionMismatch(SpinCoolError, ValueError):
    pass


class StepFailure(SpinCoolError, RuntimeError):
    pass


class TruncationOverflow(SpinCoolError, RuntimeError):
    pass


class LambDickeViolation(SpinCoolError, ValueError):
    pass


class Unreachable(SpinCoolError, ValueError):
    pass


class NotSelective(SpinCoolError, ValueError):
    pass


class InvalidDensityMatrix(SpinCoolError, ValueError):
    pass
