"""Exception types shared across the package."""


class ParcelSenseError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(ParcelSenseError):
    """Raised when an input file violates the documented formats."""


class VocabularyError(ParcelSenseError):
    """Raised for words outside a declared vocabulary."""


class EmptyParcelError(ParcelSenseError):
    """Raised when an operation requires at least one sampled word."""


class ProtocolError(ParcelSenseError):
    """Raised when an external labeler violates the wire protocol."""


class WorkerTimeoutError(ProtocolError):
    """Raised when an external labeler does not answer in time."""
