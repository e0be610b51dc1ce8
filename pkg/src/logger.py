"""Centralized logging configuration for the EDU retriever."""

import json
import logging
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

from src.constants import (
    APP_LOG_FILE_NAME,
    EVENTS_LOG_FILE_NAME,
    LOG_BACKUP_COUNT,
    LOG_LEVEL,
    LOG_MAX_BYTES,
    LOGGER_ROOT,
)


class RetrieverLogger:
    """Centralized logger for the retrieval pipeline."""

    _instance = None
    _initialized = False

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self, log_dir: Optional[Path] = None, level: str = LOG_LEVEL):
        """Initialize logger singleton."""
        if self._initialized:
            return

        self.log_dir = Path(log_dir) if log_dir else None
        self.level = level
        self.training_log_file: Optional[Path] = None

        self._setup_main_logger()
        self._setup_training_logger()
        self._setup_event_logger()

        self._initialized = True

    def _setup_main_logger(self):
        """Setup main application logger."""
        # Only show WARNING and above for third-party libraries
        third_party_loggers = [
            "httpx",
            "httpcore",
            "urllib3",
            "asyncio",
            "torch",
            "transformers",
            "sentence_transformers",
            "filelock",
        ]

        for logger_name in third_party_loggers:
            logging.getLogger(logger_name).setLevel(logging.WARNING)

        root_logger = logging.getLogger()
        root_logger.setLevel(logging.DEBUG)

        # Remove handlers installed by an earlier setup, keep foreign ones (pytest caplog)
        for handler in list(root_logger.handlers):
            if getattr(handler, "_edu_retriever", False):
                root_logger.removeHandler(handler)

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(getattr(logging, self.level.upper(), logging.INFO))
        console_handler.setFormatter(
            logging.Formatter(
                "%(asctime)s [%(levelname)s] %(name)s: %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
            )
        )
        console_handler._edu_retriever = True
        root_logger.addHandler(console_handler)

        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = RotatingFileHandler(
                self.log_dir / APP_LOG_FILE_NAME,
                maxBytes=LOG_MAX_BYTES,
                backupCount=LOG_BACKUP_COUNT,
                encoding="utf-8",
            )
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(
                logging.Formatter(
                    "%(asctime)s [%(levelname)s] %(name)s:%(lineno)d - %(message)s",
                    datefmt="%Y-%m-%d %H:%M:%S",
                )
            )
            file_handler._edu_retriever = True
            root_logger.addHandler(file_handler)

    def _setup_training_logger(self):
        """Setup the JSON-lines training/event logger."""
        self.training_logger = logging.getLogger(f"{LOGGER_ROOT}.training")
        self.training_logger.setLevel(logging.DEBUG)
        self.training_logger.propagate = False  # Don't propagate to root logger

    def _setup_event_logger(self):
        """Setup the event logger.

        Events go to the run directory and, through the training logger, to
        the attached training log while one is open.
        """
        self.event_logger = logging.getLogger(f"{LOGGER_ROOT}.training.events")
        self.event_logger.setLevel(logging.DEBUG)
        for handler in list(self.event_logger.handlers):
            handler.close()
            self.event_logger.removeHandler(handler)

        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            handler = logging.FileHandler(
                self.log_dir / EVENTS_LOG_FILE_NAME, mode="a", encoding="utf-8"
            )
            handler.setLevel(logging.DEBUG)
            handler.setFormatter(logging.Formatter("%(message)s"))
            self.event_logger.addHandler(handler)

    def attach_training_log(self, path: Path):
        """Route training records to ``path``, replacing any previous target.

        Args:
            path: JSON Lines file receiving one record per line
        """
        for handler in list(self.training_logger.handlers):
            handler.close()
            self.training_logger.removeHandler(handler)

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(path, mode="a", encoding="utf-8")
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter("%(message)s"))
        self.training_logger.addHandler(handler)
        self.training_log_file = path

    def detach_training_log(self):
        """Close the training log file, if any."""
        for handler in list(self.training_logger.handlers):
            handler.close()
            self.training_logger.removeHandler(handler)
        self.training_log_file = None

    def get_logger(self, name: str) -> logging.Logger:
        """Get a logger instance.

        Args:
            name: Logger name (usually __name__)

        Returns:
            Logger instance
        """
        return logging.getLogger(name)

    def log_epoch(
        self,
        epoch: int,
        rank_loss: float,
        filter_loss: float,
        total: float,
        precision_at_k: float,
        ndcg_at_3: float,
        mrr_1st: float,
        wall_seconds: float,
    ):
        """Log one training epoch as a JSON record.

        Args:
            epoch: Epoch number (1-based)
            rank_loss: Mean ranking loss over the epoch
            filter_loss: Mean filtering loss over the epoch
            total: Mean total loss over the epoch
            precision_at_k: Query-selection Precision@k on the selection split
            ndcg_at_3: Document NDCG@3 on the selection split
            mrr_1st: MRR of the oracle top document on the selection split
            wall_seconds: Wall-clock duration of the epoch
        """
        entry = {
            "epoch": epoch,
            "rank_loss": rank_loss,
            "filter_loss": filter_loss,
            "total": total,
            "precision_at_k": precision_at_k,
            "ndcg_at_3": ndcg_at_3,
            "mrr_1st": mrr_1st,
            "wall_seconds": round(wall_seconds, 3),
        }
        self.training_logger.info(self._format_log_entry(entry))

    def log_event(self, event: str, metadata: Optional[Dict[str, Any]] = None):
        """Log a pipeline event (command start/end, artifact written)."""
        entry: Dict[str, Any] = {
            "type": "event",
            "timestamp": datetime.now().isoformat(),
            "event": event,
        }
        if metadata:
            entry["metadata"] = metadata
        self.event_logger.info(self._format_log_entry(entry))

    def _format_log_entry(self, entry: dict) -> str:
        return json.dumps(entry, ensure_ascii=False, indent=None)


# Global logger instance
_logger_instance = None


def setup_logging(log_dir: Optional[Path] = None, level: str = LOG_LEVEL) -> RetrieverLogger:
    """Setup logging for the application.

    A later call with a ``log_dir`` adds the rotating file handler even when
    console logging was already configured.
    """
    global _logger_instance
    if _logger_instance is None:
        _logger_instance = RetrieverLogger(log_dir=log_dir, level=level)
    elif log_dir is not None and _logger_instance.log_dir != Path(log_dir):
        _logger_instance.log_dir = Path(log_dir)
        _logger_instance.level = level
        _logger_instance._setup_main_logger()
        _logger_instance._setup_event_logger()
    return _logger_instance


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance.

    Args:
        name: Logger name (usually __name__)

    Returns:
        Logger instance
    """
    return logging.getLogger(name)


def attach_training_log(path: Path):
    """Route epoch and event records to a JSON Lines file."""
    setup_logging().attach_training_log(path)


def detach_training_log():
    """Stop writing epoch and event records."""
    setup_logging().detach_training_log()


def log_epoch(*args, **kwargs):
    """Log a training epoch."""
    setup_logging().log_epoch(*args, **kwargs)


def log_event(*args, **kwargs):
    """Log a pipeline event."""
    setup_logging().log_event(*args, **kwargs)
