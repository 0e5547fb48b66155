import json
import logging
import os
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class MetricsLog:
    """Newline-delimited JSON records, one per line, flushed as written"""

    def __init__(self, path: Optional[str], append: bool = False):
        self.path = path
        self._file = None
        if path:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            self._file = open(path, 'a' if append else 'w')

    def write(self, record: Dict):
        if self._file is None:
            return
        self._file.write(json.dumps(record, sort_keys=False) + "\n")
        self._file.flush()

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> 'MetricsLog':
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def write_records(path: str, records: List[Dict]):
    with MetricsLog(path) as log:
        for record in records:
            log.write(record)


def read_records(path: str) -> List[Dict]:
    records = []
    with open(path, 'r') as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
