
# slog.py
# Structured JSON-lines logger built on print(), shared by every heatcast module.

import json
import os
import sys
import time
import traceback
from contextlib import contextmanager
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

LEVELS = {"DEBUG": 10, "INFO": 20, "WARN": 30, "ERROR": 40}
LEVEL_ENV = "HEATCAST_LOG_LEVEL"


def _threshold() -> int:
    # Read on every call so tests and subprocess workers can change it.
    name = os.environ.get(LEVEL_ENV, "INFO").upper()
    return LEVELS.get(name, LEVELS["INFO"])


def _jsonable(value):
    """Renders numpy values, dates and paths into JSON-native types."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        if np.issubdtype(value.dtype, np.datetime64):
            return [str(v) for v in value]
        return value.tolist()
    if isinstance(value, (datetime, date)):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _log(level: str, message: str, context: dict, exc_info: bool, depth: int = 2):
    if LEVELS[level] < _threshold():
        return

    # depth frames up is the caller of info/warn/error/debug
    frame = sys._getframe(depth)

    log_obj = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "level": level,
        "message": message,
        "source": {
            "filename": os.path.basename(frame.f_code.co_filename),
            "line": frame.f_lineno,
            "function": frame.f_code.co_name,
        },
        "context": dict(context) if context is not None else {},
    }

    if exc_info:
        exc_type, exc_value, exc_tb = sys.exc_info()
        if exc_type:
            log_obj["context"]["exception"] = {
                "type": exc_type.__name__,
                "message": str(exc_value),
                "traceback": "".join(traceback.format_exception(exc_type, exc_value, exc_tb)),
            }

    output_stream = sys.stderr if level in ("WARN", "ERROR") else sys.stdout
    try:
        line = json.dumps(log_obj, default=_jsonable)
    except (TypeError, ValueError):
        log_obj["context"] = {"__unserializable_data__": str(context)}
        line = json.dumps(log_obj)
    print(line, file=output_stream, flush=True)


def debug(message: str, context: dict = None):
    """Logs a message with DEBUG level."""
    _log("DEBUG", message, context, exc_info=False)


def info(message: str, context: dict = None):
    """Logs a message with INFO level."""
    _log("INFO", message, context, exc_info=False)


def warn(message: str, context: dict = None):
    """Logs a message with WARN level."""
    _log("WARN", message, context, exc_info=False)


def error(message: str, context: dict = None, exc_info: bool = False):
    """Logs a message with ERROR level. Set exc_info=True inside an except block."""
    _log("ERROR", message, context, exc_info=exc_info)


@contextmanager
def timed(message: str, context: dict = None):
    """
    Logs `message` at INFO once the block finishes, with its wall time as
    `latency_ms` in the context.
    """
    start_ns = time.monotonic_ns()
    extra = dict(context) if context is not None else {}
    try:
        yield extra
    finally:
        extra["latency_ms"] = round((time.monotonic_ns() - start_ns) / 1_000_000, 2)
        # one more frame: the generator sits between the caller and _log
        _log("INFO", message, extra, exc_info=False, depth=3)
