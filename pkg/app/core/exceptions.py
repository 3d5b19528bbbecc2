from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFICATION = 3


class ToolkitError(Exception):
    """Base error carrying the process exit code it maps to."""
    exit_code: int = EXIT_DATA

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ShapeError(ToolkitError):
    pass


class InvalidShapeError(ShapeError):
    pass


class InvalidRangeError(ToolkitError):
    pass


class InvalidParameterError(ToolkitError):
    pass


class FrameIndexError(ToolkitError):
    pass


class InvalidLabelError(ToolkitError):
    pass


class InvalidBatchError(ToolkitError):
    pass


class StateError(ToolkitError):
    pass


class FormatError(ToolkitError):
    """Malformed clip or checkpoint file; `offset` is the byte position of the fault."""

    def __init__(self, detail: str, offset: int = 0):
        super().__init__(f"{detail} (at byte {offset})")
        self.offset = offset


class InsufficientFramesError(ToolkitError):
    pass


class MissingFrameError(ToolkitError):
    pass


class InsufficientDataError(ToolkitError):
    pass


class InvalidDatasetError(ToolkitError):
    pass


class UsageError(ToolkitError):
    exit_code = EXIT_USAGE


class VerificationError(ToolkitError):
    exit_code = EXIT_VERIFICATION
