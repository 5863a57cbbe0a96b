"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every failure that a
subcommand can hit should be raised as one of the classes below rather
than a bare ValueError.
"""


class ConfigError(ValueError):
    """A config value is missing, unknown, or out of range."""


class ShapeError(ValueError):
    """A tensor/array argument has the wrong rank, shape, or dtype."""


class DataError(RuntimeError):
    """Base class for dataset problems."""


class EmptyDirectory(DataError):
    """No decodable image was found where a dataset was expected."""


class DecodeError(DataError):
    """A file that looked like an image could not be decoded."""


class ImageTooSmall(DataError):
    """An image cannot host a single training crop at the requested size."""


class NonFiniteLoss(RuntimeError):
    """The training loss became NaN or infinite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"non-finite loss at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class CheckpointMismatch(RuntimeError):
    """A checkpoint does not match the architecture/config it is loaded into."""
