import os
from typing import Dict, List, Type

from core.exceptions import ConfigurationException, IngestException
from ingest.base import BaseModelReader
from ingest.colmap_binary import ColmapBinaryReader
from ingest.colmap_text import ColmapTextReader
from models.sparse_model import SparseModel


class ReaderFactory:
    """Factory for sparse-model readers"""

    _reader_types: Dict[str, Type[BaseModelReader]] = {
        'colmap_text': ColmapTextReader,
        'colmap_binary': ColmapBinaryReader,
    }

    @classmethod
    def create(cls, reader_type: str) -> BaseModelReader:
        if reader_type not in cls._reader_types:
            raise ConfigurationException(f"Unknown reader type: {reader_type}")
        return cls._reader_types[reader_type]()

    @classmethod
    def detect(cls, model_dir: str) -> BaseModelReader:
        """Pick the reader whose files are present

        A partially present layout is still returned, so that reading it names the missing file.
        """
        readers = [reader_class() for reader_class in cls._reader_types.values()]
        for reader in readers:
            if reader.can_read(model_dir):
                return reader
        for reader in readers:
            if any(os.path.exists(p) for p in reader.file_paths(model_dir).values()):
                return reader
        expected = list(ColmapTextReader().file_paths(model_dir).values())
        raise IngestException(f"No sparse model found in {model_dir}; expected {', '.join(expected)} "
                              f"(or the .bin equivalents)")

    @classmethod
    def register_reader(cls, name: str, reader_class: Type[BaseModelReader]):
        cls._reader_types[name] = reader_class

    @classmethod
    def get_available_types(cls) -> List[str]:
        return list(cls._reader_types.keys())


def parse_colmap(model_dir: str) -> SparseModel:
    """Parse a COLMAP sparse model directory (text or binary layout)"""
    return ReaderFactory.detect(model_dir).read(model_dir)
