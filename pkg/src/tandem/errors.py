"""Exception hierarchy shared by every tandem module."""


class TandemError(Exception):
    """Base class for all tandem errors."""


class ConfigError(TandemError, ValueError):
    """Invalid configuration value or unknown key.

    ``key`` names the offending configuration entry when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ZeroGearRatio(ConfigError):
    pass


# arbitration / controller / plant
class OutOfOrderTick(TandemError):
    pass


class MissingLatch(TandemError):
    pass


class NonFiniteInput(TandemError, ValueError):
    pass


class NonFiniteTorque(NonFiniteInput):
    pass


class DepthOutOfRange(TandemError, ValueError):
    pass


# session
class NonContiguousTick(TandemError):
    pass


class SchemaMismatch(TandemError):
    pass


class CorruptRecord(TandemError):
    """A trace record could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# netlink
class AngleOverflow(TandemError, ValueError):
    pass


class FrameError(TandemError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class BadLength(FrameError):
    pass


class BadCrc(FrameError):
    pass


# metrics
class NotCompleted(TandemError):
    pass


class EmptyInput(TandemError, ValueError):
    pass


class NonPositiveFirst(TandemError, ValueError):
    pass


class InsufficientTrials(TandemError):
    def __init__(self, message, user_id=None):
        super().__init__(message)
        self.user_id = user_id


class DegenerateAbscissa(TandemError):
    pass


class TickError(TandemError):
    """A module error raised while executing a specific loop tick."""

    def __init__(self, tick, cause):
        super().__init__(f"tick {tick}: {type(cause).__name__}: {cause}")
        self.tick = tick
        self.cause = cause
