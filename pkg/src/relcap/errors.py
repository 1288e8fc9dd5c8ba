"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs that violate its preconditions."""


class DimensionError(ContractError):
    """Array shapes do not agree."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class TrainingError(RuntimeError):
    """Training diverged (loss became non-finite)."""

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class DatasetError(ContractError):
    """A dataset record failed to parse or validate."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
