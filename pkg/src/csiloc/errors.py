"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class DomainError(ValueError):
    """A location falls outside the feasible area."""


class SplitError(ValueError):
    """A dataset cannot be split as requested."""


class WindowError(ValueError):
    """A fusion group is too short to fill a window."""


class StateError(RuntimeError):
    """A cached forward pass no longer matches its model."""


class FormatError(ValueError):
    """A dataset or model file failed validation.

    ``offset`` is the byte position where reading stopped making sense.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, last_finite_epoch: int):
        super().__init__(f"{message} (last finite epoch: {last_finite_epoch})")
        self.last_finite_epoch = last_finite_epoch
