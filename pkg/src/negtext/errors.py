"""Exception hierarchy shared across the package."""


class NegtextError(Exception):
    """Base class for all package errors."""


class FormatError(NegtextError):
    """Malformed binary header or container structure."""


class DataError(NegtextError):
    """Numeric payload violates a contract (non-finite values, dim mismatch)."""


class DimError(NegtextError):
    """Vector/matrix dimension mismatch between operands."""


class ConfigError(NegtextError):
    """Configuration value outside its permitted range."""


class InputError(NegtextError):
    """Caller-supplied input violates an operation precondition."""


class GenerationError(NegtextError):
    """Generation client failed after bounded retries."""

    def __init__(self, message: str, image_id: str | None = None):
        super().__init__(message)
        self.image_id = image_id
