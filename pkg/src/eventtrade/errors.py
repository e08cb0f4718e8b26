"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or usage."""


class DataError(ValueError):
    """Malformed or missing input data."""


class NumericError(ArithmeticError):
    """Non-finite loss or parameters during training."""


class CalendarExhausted(DataError):
    """The trading calendar does not extend far enough."""
