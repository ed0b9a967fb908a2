"""
Logging setup

Console output uses the classic text format, the application log file is
JSON lines, and each run directory gets its own plain-text run.log.
"""

from pathlib import Path
from typing import Optional
import logging

from pythonjsonlogger import jsonlogger

from app.config import Settings, settings as default_settings

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
JSON_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"

# Marker attribute so re-configuration only removes our own handlers
_OWNED = "_adn_handler"


def _own(handler: logging.Handler) -> logging.Handler:
    setattr(handler, _OWNED, True)
    return handler


def configure_logging(
    settings: Optional[Settings] = None,
    run_dir: Optional[Path] = None,
) -> None:
    """
    Install console, JSON app-log and (optionally) run-log handlers on the
    root logger. Safe to call repeatedly.
    """
    settings = settings or default_settings
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if settings.debug else getattr(logging, settings.log_level))

    for handler in list(root.handlers):
        if getattr(handler, _OWNED, False):
            root.removeHandler(handler)
            handler.close()

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(TEXT_FORMAT))
    root.addHandler(_own(console))

    if settings.log_file:
        settings.create_log_dir()
        app_log = logging.FileHandler(settings.log_file, encoding="utf-8")
        app_log.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
        root.addHandler(_own(app_log))

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        run_log = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
        run_log.setFormatter(logging.Formatter(TEXT_FORMAT))
        root.addHandler(_own(run_log))
