"""Exception hierarchy.

Every error carries a stable ``code`` string (used in API payloads) and an
``exit_code`` matching the CLI contract: 2 config, 3 data, 4 internal.
"""


class MultiIDError(Exception):
    code = "internal-error"
    exit_code = 4


class ConfigError(MultiIDError):
    code = "config-error"
    exit_code = 2


class DataError(MultiIDError):
    code = "data-error"
    exit_code = 3


class BackendMismatchError(DataError):
    code = "backend-mismatch"


class ZeroNormError(DataError):
    code = "zero-norm"


class EmptyInputError(DataError):
    code = "empty-input"


class DegenerateLandmarksError(DataError):
    code = "degenerate-landmarks"


class StoreFormatError(DataError):
    code = "store-format"


class BadMagicError(StoreFormatError):
    code = "bad-magic"


class VersionMismatchError(StoreFormatError):
    code = "version-mismatch"


class DimensionMismatchError(StoreFormatError):
    code = "dimension-mismatch"


class NonFiniteValueError(StoreFormatError):
    code = "non-finite-value"


class DuplicateFaceIdError(StoreFormatError):
    code = "duplicate-face-id"


class CountMismatchError(StoreFormatError):
    code = "count-mismatch"


class InsufficientDataError(DataError):
    code = "insufficient-data"
