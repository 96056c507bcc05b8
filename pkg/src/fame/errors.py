"""Error categories shared across modules (the CLI maps them to exit codes)."""


class DimensionError(ValueError):
    """An array has the wrong shape for the model or network."""


class NonFiniteError(ValueError):
    """An input or intermediate value is NaN or infinite."""
