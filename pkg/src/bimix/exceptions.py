"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class LabelError(ValueError):
    """A label map holds an id outside ``[0, C)`` that is not the ignore id."""


class EmptyClassesError(ValueError):
    pass


class PairingError(ValueError):
    """Day and night batches do not describe the same locations."""


class DataError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class IntegrityError(CheckpointError):
    """Stored checksum does not match the parameter payload."""


class ShapeError(CheckpointError):
    pass


class EmptyEvalError(ValueError):
    pass


class OverwriteError(FileExistsError):
    pass
