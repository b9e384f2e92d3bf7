"""Exception types shared across the package."""


class GmgError(Exception):
    """Base class for all package errors."""


class ContractError(GmgError):
    """An operation was called with arguments violating its contract (shapes, ranges)."""


class ConfigError(ContractError):
    """A configuration is internally inconsistent or incompatible with the data."""


class ValidationError(GmgError):
    """Data failed a semantic validity check (e.g. pixel range, empty dataset)."""


class NumericError(GmgError):
    """A non-finite value appeared where finite math was required."""


class DataFormatError(GmgError):
    """Base class for sequence-file format errors."""


class HeaderError(DataFormatError):
    """Sequence file has a malformed or unsupported header."""


class TruncationError(DataFormatError):
    """Sequence file payload is shorter than its header declares."""


class DtypeError(DataFormatError):
    """Sequence file declares an unsupported dtype code."""
