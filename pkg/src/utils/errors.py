class FluxError(Exception):
    """
    FluxError Class:
    Root of every error raised on purpose by this code base. The command line entry point maps its subclasses to exit
    codes (see `main.EXIT_CODES`).
    """


class DimensionError(FluxError, ValueError):
    """Raised when tensor shapes (or widths) of an operation do not agree."""


class NonFiniteError(FluxError, ArithmeticError):
    """Raised when a tensor (or a gradient) holds NaN or Inf values."""


class DataValidationError(FluxError, ValueError):
    """Raised when user-supplied data or configuration violates its documented contract."""


class InsufficientWindowsError(FluxError):
    """
    InsufficientWindowsError Class:
    Skip-site signal: a site holds too few windows to draw a disjoint support/query episode from.
    """

    def __init__(self, site_id: str, n_windows: int, support_size: int):
        super().__init__(f'site "{site_id}" has {n_windows} windows, need more than {support_size}')
        self.site_id = site_id
        self.n_windows = n_windows
        self.support_size = support_size


class PipelineStateError(FluxError, RuntimeError):
    """Raised when a pipeline stage is invoked before the artifacts it consumes exist."""
