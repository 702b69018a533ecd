"""Exception types raised across the package."""


class AccountingError(Exception):
    """Base class for every error raised by pldp_shuffle."""


class ConfigError(AccountingError, ValueError):
    """An experiment or mechanism configuration is contradictory."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class CalibrationError(AccountingError, ValueError):
    """The requested privacy level cannot be met by the mechanism family."""


class NumericError(AccountingError, ArithmeticError):
    """A root search or bracket failed to converge."""


class UnsupportedOperation(AccountingError, TypeError):
    """Operation is undefined for the given mechanism kind."""


class OracleLimitError(AccountingError, ValueError):
    """Exact enumeration was requested beyond its guard limit."""
