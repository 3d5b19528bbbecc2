import logging
import sys
from app.core.exceptions import UsageError

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT,
    handlers=[
        logging.StreamHandler(sys.stderr)
    ]
)

# PNG decoding logs every chunk at DEBUG
logging.getLogger("PIL").setLevel(logging.WARNING)


def set_log_level(level: str) -> None:
    resolved = logging.getLevelName(level.upper())
    if not isinstance(resolved, int):
        raise UsageError(f"Unknown LOG_LEVEL '{level}'")
    logging.getLogger().setLevel(resolved)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
