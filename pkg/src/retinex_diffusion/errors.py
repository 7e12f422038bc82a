"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array shapes or spatial sizes are incompatible."""


class ParameterError(ValueError):
    """A scalar argument is outside its valid range."""


class OrderingError(ValueError):
    """Timesteps were supplied in the wrong order."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared in a computation."""

    def __init__(self, stage, t=None):
        self.stage = stage
        self.t = t
        where = f" at t={t}" if t is not None else ""
        super().__init__(f"non-finite values produced by {stage}{where}")


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class MissingEntryError(CheckpointError, KeyError):
    def __init__(self, entry):
        self.entry = entry
        super().__init__(f"checkpoint is missing entry {entry!r}")

    def __str__(self):
        return self.args[0]


class DatasetError(RuntimeError):
    pass


class UnpairedImageError(DatasetError):
    def __init__(self, path, missing="high"):
        self.path = path
        super().__init__(f"no matching {missing}-light image for {path}")


class ConfigError(ValueError):
    pass
