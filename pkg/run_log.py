# run_log.py — shared status log for every command run

import logging
import threading
import traceback
from typing import List

logger = logging.getLogger("agepi")

status_log: List[str] = []
MAX_LOG_ENTRIES = 150

_lock = threading.Lock()


def log_step(message: str) -> None:
    line = message.strip()
    if not line:
        return

    logger.info(line)
    with _lock:
        status_log.append(line)

        # Always keep log small
        if len(status_log) > MAX_LOG_ENTRIES:
            status_log[:] = status_log[-MAX_LOG_ENTRIES:]


def clear_status_log() -> None:
    with _lock:
        status_log.clear()


def recent_steps(tag: str = "") -> List[str]:
    """Snapshot of the status log, optionally only lines starting with `tag`."""
    with _lock:
        lines = list(status_log)
    if not tag:
        return lines
    return [line for line in lines if line.startswith(tag)]


# -------------------------------
# Live log helpers
# -------------------------------
def log_success(step: str, message: str) -> None:
    log_step(f"{step} [SUCCESS] {message}")


def log_error(step: str, err: Exception) -> None:
    tb = traceback.format_exc()
    log_step(f"{step} [ERROR] {err}")
    if tb and tb.strip() != "NoneType: None":
        logger.debug(tb)
