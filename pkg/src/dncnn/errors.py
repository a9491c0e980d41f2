"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1,
data/format problems exit 2, diverged training exits 3.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class SizeError(ValueError):
    """An array or image is too small (or too large) for the operation."""


class FormatError(ValueError):
    """A file does not conform to its expected binary/text format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """A run configuration is malformed or violates an invariant."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UsageError(ValueError):
    """Bad command-line invocation (unknown subcommand, missing flag/key)."""


class DegenerateBatchError(ValueError):
    """Batch statistics requested over fewer than two values per channel."""


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/Inf during training."""

    def __init__(self, step, epoch, loss):
        super().__init__(
            f"training diverged at step {step} (epoch {epoch}): loss={loss}"
        )
        self.step = step
        self.epoch = epoch
        self.loss = loss
