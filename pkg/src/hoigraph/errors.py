"""Exception hierarchy.

Two families matter to callers: configuration problems (bad parameters,
missing inputs; CLI exit code 1) and data problems (malformed or
non-finite input, corrupt files; CLI exit code 2).
"""


class HoiGraphError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HoiGraphError, ValueError):
    """Invalid parameter or inconsistent configuration."""


class InvalidFuzzifierError(ConfigurationError):
    def __init__(self, m):
        super().__init__(f"fuzzifier m must be > 1, got {m!r}")
        self.m = m


class BankNotInitializedError(ConfigurationError):
    def __init__(self, what="prototype bank"):
        super().__init__(
            f"{what} is not initialized; use K-Means initialization "
            "(warm-start phase) and bootstrap the bank first"
        )


class DataError(HoiGraphError, ValueError):
    """Malformed, non-finite or inconsistent input data."""


class ShapeError(DataError):
    def __init__(self, name, expected, actual):
        super().__init__(f"{name}: expected shape {expected}, got {actual}")
        self.name = name
        self.expected = expected
        self.actual = actual


class FormatError(DataError):
    """Binary or text file does not follow its declared layout."""


class MagicMismatchError(FormatError):
    def __init__(self, expected: bytes, actual: bytes):
        super().__init__(f"bad magic: expected {expected!r}, got {actual!r}")
        self.expected = expected
        self.actual = actual


class VersionMismatchError(FormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"unsupported version {actual} (expected {expected})")
        self.expected = expected
        self.actual = actual


class TruncatedFileError(FormatError):
    def __init__(self, expected_bytes: int, actual_bytes: int):
        super().__init__(
            f"file truncated: expected {expected_bytes} bytes, got {actual_bytes}"
        )
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes


class NormalizationError(DataError):
    """Probability table does not sum to one."""


class NotPositiveDefiniteError(DataError):
    """Covariance matrix is not symmetric positive definite."""
