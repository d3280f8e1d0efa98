class SeqOramError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(SeqOramError, IndexError):
    pass


class SizeError(SeqOramError, ValueError):
    pass


class StorageError(SeqOramError, OSError):
    pass


class ConcurrencyError(SeqOramError, RuntimeError):
    """Raised when a second mutator interleaves with an active one."""


class ParameterError(SeqOramError, ValueError):
    pass


class IntegrityError(SeqOramError):
    """AEAD tag mismatch or a wrong key detected on open."""


class CorruptionError(SeqOramError):
    """On-device structure failed to parse."""


class CapacityError(SeqOramError):
    pass


class UsageError(SeqOramError, ValueError):
    pass
