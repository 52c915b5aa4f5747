"""Exception types shared across the package."""


class ResourceError(MemoryError):
    """Raised when a requested object would exceed the configured memory budget."""

    def __init__(self, message: str, required_bytes: int | None = None):
        super().__init__(message)
        self.required_bytes = required_bytes


class ConvergenceError(RuntimeError):
    """Raised when the Krylov propagator cannot reach its error tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NoFiniteBetaError(ValueError):
    """Raised when a target energy has no finite inverse temperature."""

    def __init__(self, message: str, edge: str):
        super().__init__(message)
        self.edge = edge
