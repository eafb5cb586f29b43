"""
Dispel Structured Logging
JSON or text logging with context, written to stderr
"""

import logging
import json
import sys
from datetime import datetime, timezone
from typing import Dict, Any
from config import settings

# Attributes every LogRecord carries; anything else came in through `extra=`
_RESERVED = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


def _context(record: logging.LogRecord) -> Dict[str, Any]:
    return {k: v for k, v in vars(record).items() if k not in _RESERVED}


class JSONFormatter(logging.Formatter):
    """Format logs as JSON for structured logging"""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        log_data.update(_context(record))

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


class TextFormatter(logging.Formatter):
    """Human-readable format for interactive runs"""

    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")
        level = record.levelname[:4]
        message = record.getMessage()

        ctx = _context(record)
        extra = ""
        if ctx:
            extra = " | " + " ".join(f"{k}={v}" for k, v in ctx.items())

        text = f"[{timestamp}] {level} {record.name}: {message}{extra}"
        if record.exc_info:
            text += "\n" + self.formatException(record.exc_info)
        return text


def get_logger(name: str) -> logging.Logger:
    """
    Get configured logger instance

    Args:
        name: Logger name (usually module name)

    Returns:
        Configured logger
    """
    logger = logging.getLogger(f"dispel.{name}")

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    level = getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logger.setLevel(level)
    logger.propagate = False

    # stderr keeps stdout free for CSV output
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)

    if settings.LOG_FORMAT == "json":
        formatter = JSONFormatter()
    else:
        formatter = TextFormatter()

    handler.setFormatter(formatter)
    logger.addHandler(handler)

    return logger
