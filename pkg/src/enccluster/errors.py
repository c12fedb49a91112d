"""Exception types shared across the package."""


class EncClusterError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(EncClusterError, ValueError):
    pass


class ConstructionFailed(EncClusterError):
    """A fuse filter could not be built within the retry budget."""


class DecodeError(EncClusterError, ValueError):
    """Malformed or truncated wire bytes."""


class PlaintextBoundExceeded(EncClusterError, ValueError):
    pass


class InsufficientShares(EncClusterError):
    """Fewer partial decryption keys than key holders."""


class TagMismatch(EncClusterError):
    """Partial keys derived for different functions were mixed."""


class LabelMismatch(EncClusterError):
    """Ciphertexts from different labels (rounds) were mixed."""


class InsufficientCiphertexts(EncClusterError):
    pass


class DlogOutOfRange(EncClusterError):
    """The decrypted aggregate lies outside the discrete-log search range."""
