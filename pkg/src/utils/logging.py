import logging
import sys

from pythonjsonlogger import jsonlogger

from src.config.settings import settings
from src.utils.privacy import is_raw_data_key, scrub_value

# Attributes every LogRecord carries; anything else arrived through `extra=`
_STANDARD_ATTRS = set(
    logging.LogRecord("", 0, "", 0, "", None, None).__dict__.keys()
) | {"message", "asctime"}


class PrivacyLogFilter(logging.Filter):
    """Redact raw client data passed through `extra=` before emission."""

    def filter(self, record: logging.LogRecord) -> bool:
        for key, value in list(record.__dict__.items()):
            if key in _STANDARD_ATTRS:
                continue
            if is_raw_data_key(key) or not isinstance(
                value, (str, int, float, bool, type(None), dict, list)
            ):
                setattr(record, key, scrub_value(key, value))
        return True


def setup_logging(level: str | None = None) -> None:
    """Configure structured JSON logging on the root logger."""
    logger = logging.getLogger()

    try:
        logger.setLevel(level or settings.app.LOG_LEVEL)
    except ValueError:
        logger.setLevel(logging.INFO)

    if logger.handlers:
        logger.handlers = []

    # stdout is reserved for command output, logs go to stderr
    handler = logging.StreamHandler(sys.stderr)
    formatter = jsonlogger.JsonFormatter(
        fmt="%(asctime)s %(levelname)s %(name)s %(message)s",
        rename_fields={"asctime": "timestamp", "levelname": "level"},
    )
    handler.setFormatter(formatter)
    handler.addFilter(PrivacyLogFilter())
    logger.addHandler(handler)


log = logging.getLogger(__name__)
