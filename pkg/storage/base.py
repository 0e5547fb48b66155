import logging
import os
import tempfile
from abc import ABC, abstractmethod
from contextlib import contextmanager
from typing import Any, Iterator, Optional, Tuple

from core.config import Config


class BaseStorage(ABC):
    """Base storage interface"""

    extensions: Tuple[str, ...] = ()

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.logger = logging.getLogger(self.__class__.__module__)

    @abstractmethod
    def get_name(self) -> str:
        pass

    @abstractmethod
    def save(self, obj: Any, path: str) -> str:
        """Write obj to path and return the path"""
        pass

    @abstractmethod
    def load(self, path: str) -> Any:
        pass

    def handles(self, path: str) -> bool:
        return os.path.splitext(path)[1].lower() in self.extensions


class AtomicFileMixin:
    """Write-to-temp-then-rename file operations"""

    def _ensure_directory(self, path: str):
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)

    @contextmanager
    def _atomic_path(self, path: str) -> Iterator[str]:
        """Yield a temporary sibling of path; it replaces path only if the block succeeds"""
        self._ensure_directory(path)
        directory, name = os.path.split(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=os.path.splitext(name)[1], dir=directory)
        os.close(fd)
        try:
            yield tmp
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)
