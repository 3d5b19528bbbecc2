from pydantic import ValidationError
from app.core.exceptions import ToolkitError, UsageError, EXIT_DATA, EXIT_USAGE
import logging

logger = logging.getLogger("mtvideo.error")

def usage_error_handler(exc: UsageError) -> int:
    logger.warning(f"Usage error: {exc.detail}")
    return exc.exit_code

def validation_exception_handler(exc: ValidationError) -> int:
    logger.warning(f"Validation error: {exc.errors()}")
    return EXIT_USAGE

def toolkit_exception_handler(exc: ToolkitError) -> int:
    logger.error(f"{type(exc).__name__}: {exc.detail}")
    return exc.exit_code

def generic_exception_handler(exc: Exception) -> int:
    logger.error(f"Unhandled error: {exc!r}")
    return EXIT_DATA
