"""Exception hierarchy for blockprof."""


class BlockprofError(Exception):
    """Base class for all blockprof errors."""


class ConfigurationError(BlockprofError):
    """Invalid configuration, unusable output location, or duplicate channel."""


class CodecUnavailableError(ConfigurationError):
    """A required compression library could not be loaded."""


class UsageError(BlockprofError):
    """An operation was invoked in a state that does not permit it."""


class CodecError(BlockprofError):
    """A codec failed internally while compressing."""


class FormatError(BlockprofError):
    """A trace file violates the on-disk format.

    ``offset`` is the byte position of the problem when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset

    def __str__(self) -> str:
        base = super().__str__()
        if self.offset is None:
            return base
        return f"{base} (at byte offset {self.offset})"


class IntegrityError(FormatError):
    """A frame payload is corrupt or does not decompress to its stated size."""


class SequenceError(FormatError):
    """Frame sequence numbers have a gap or a duplicate."""
