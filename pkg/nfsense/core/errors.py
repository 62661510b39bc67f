class NFSenseError(Exception):
    """Base class for every error raised by the nfsense package."""


class InvalidArgumentError(NFSenseError, ValueError):
    pass


class DegenerateInputError(NFSenseError):
    """Raised when an input carries no usable information (all-zero profile, flat spectrum)."""


class ConfigurationError(NFSenseError):
    pass


class TableBuildError(NFSenseError):
    def __init__(self, message: str, cell: tuple[int, int] | None = None):
        super().__init__(message)
        self.cell = cell


class FileFormatError(NFSenseError):
    pass


class EstimationFailedError(NFSenseError):
    """
    Raised when an estimator cannot produce a result.

    Args:
        message (str): Human readable reason.
        diagnostics (dict | None): Whatever the failing stage measured before giving up.
        partial: A partial result (e.g. the coarse estimate when refinement failed).
    """

    def __init__(self, message: str, diagnostics: dict | None = None, partial=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.partial = partial
