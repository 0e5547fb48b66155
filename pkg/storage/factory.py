import os
from typing import Dict, List, Optional, Type

from core.config import Config
from core.exceptions import ConfigurationException
from storage.base import BaseStorage
from storage.checkpoint_storage import CheckpointStorage
from storage.mesh_storage import MeshObjStorage, MeshPlyStorage
from storage.ply_storage import SplatPlyStorage


class StorageFactory:
    """Factory for file storage backends, keyed by content kind"""

    _storage_types: Dict[str, Type[BaseStorage]] = {
        'splats': SplatPlyStorage,
        'mesh_ply': MeshPlyStorage,
        'mesh_obj': MeshObjStorage,
        'checkpoint': CheckpointStorage,
    }

    @classmethod
    def create(cls, storage_type: str, config: Optional[Config] = None) -> BaseStorage:
        if storage_type not in cls._storage_types:
            raise ConfigurationException(f"Unknown storage type: {storage_type}")
        return cls._storage_types[storage_type](config)

    @classmethod
    def for_mesh(cls, path: str, config: Optional[Config] = None) -> BaseStorage:
        """Mesh backend chosen by file extension"""
        ext = os.path.splitext(path)[1].lower()
        for name in ('mesh_ply', 'mesh_obj'):
            if ext in cls._storage_types[name].extensions:
                return cls.create(name, config)
        raise ConfigurationException(f"Unsupported mesh extension '{ext}' (use .ply or .obj)")

    @classmethod
    def register_storage(cls, name: str, storage_class: Type[BaseStorage]):
        """Register a new storage backend"""
        cls._storage_types[name] = storage_class

    @classmethod
    def get_available_types(cls) -> List[str]:
        return list(cls._storage_types.keys())


def save_splats(splats, path: str) -> str:
    return StorageFactory.create('splats').save(splats, path)


def load_splats(path: str):
    return StorageFactory.create('splats').load(path)
