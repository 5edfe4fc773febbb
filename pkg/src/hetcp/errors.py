"""Exception types shared across the package."""


class HetcpError(Exception):
    pass


class ConfigError(HetcpError, ValueError):
    """Invalid user configuration (CLI exit code 2)."""


class DataError(HetcpError, ValueError):
    """Malformed or unusable data (CLI exit code 3)."""


class EmptyCalibrationError(DataError):
    pass


class DegenerateError(HetcpError, ValueError):
    """Raised for zero difficulty denominators and collapsed bin edges."""


class NotFittedError(HetcpError, RuntimeError):
    pass
