"""Logging setup and build information"""

import functools
import logging
import logging.handlers
import os
import subprocess
import sys

from rich.console import Console
from rich.logging import RichHandler

from face_proposals import __version__

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - Commit: %(commit)s - %(message)s"
LOG_FILE_NAME = "face_proposals.log"


class ContextFilter(logging.Filter):
    """Adds the git commit and package version to every record"""

    def filter(self, record):
        record.commit = get_git_commits()["git_commit"]
        record.version = __version__
        return True


@functools.lru_cache(maxsize=None)
def _git(*args):
    try:
        output = subprocess.check_output(
            ["git", "rev-parse", *args],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            stderr=subprocess.DEVNULL,
        )
    except (OSError, subprocess.CalledProcessError):
        return "unknown"
    return output.decode("utf-8").strip()


def get_git_commits():
    return {"git_commit": _git("--short=7", "HEAD"), "git_commit_full": _git("HEAD")}


def setup_logging(log_location=None, verbose=False):
    """Console logging through rich, plus a rotating log file when a log directory is configured"""
    # stdout carries detection lines and reports
    rich_handler = RichHandler(console=Console(stderr=True))
    rich_handler.setFormatter(logging.Formatter("%(message)s"))
    handlers = [rich_handler]

    if log_location:
        if not os.path.isabs(log_location):
            raise ValueError(f"Log location is not an absolute path: {log_location}")
        if os.path.exists(log_location) and not os.path.isdir(log_location):
            raise ValueError(f"Log location exists but is not a directory: {log_location}")
        os.makedirs(log_location, exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            os.path.join(log_location, LOG_FILE_NAME), maxBytes=1024 * 1024 * 100, backupCount=5
        )  # 5 files of 100MB
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler.addFilter(ContextFilter())
        handlers.append(file_handler)

    logging.basicConfig(level="DEBUG" if verbose else "INFO", handlers=handlers, force=True)


def error_reporting(log, module="face_proposals"):
    """Raise an error if there are Error level messages in the package logs"""
    error_string = ""
    for child in log.root.manager.loggerDict:
        if child.startswith(module):
            cache = log.root.getChild(child)._cache
            # A logger that emitted an error has cached ERROR (40) as enabled
            if cache.get(logging.ERROR):
                error_string += f"\nErrors logged in {child} during execution"
    if error_string:
        sys.tracebacklimit = 0
        raise RuntimeError(error_string)
