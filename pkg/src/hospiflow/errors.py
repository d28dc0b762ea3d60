"""Exception types. The CLI maps each to a stable exit code."""


class ConfigError(ValueError):
    """Bad configuration: missing settings, invalid windows, out-of-bounds parameters."""


class DataError(ValueError):
    """Unusable input data. ``issues`` carries the per-row diagnostics."""

    def __init__(self, message: str, issues=()):
        super().__init__(message)
        self.issues = list(issues)

    def __str__(self) -> str:
        head = super().__str__()
        if not self.issues:
            return head
        return head + "\n" + "\n".join(f"  {i}" for i in self.issues)


class SimulationError(RuntimeError):
    """The simulator or an analysis failed at runtime."""
