"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
FitConvergenceError -> 3, TagFormatError / OSError -> 4.
"""


class ConfigError(ValueError):
    """A configuration value violates an invariant. Message carries the field path."""


class FitConvergenceError(RuntimeError):
    """A least-squares fit failed to converge; message carries diagnostics."""


class TagFormatError(ValueError):
    """A time-tag file is malformed. ``byte_offset`` locates the problem."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class LockInstabilityError(RuntimeError):
    """The phase lock diverged. ``step`` is the simulation step where it aborted."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
