from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import trimesh

from core.exceptions import ContractException


@dataclass
class TsdfVolume:
    """Voxel grid of truncated signed distances fused from depth maps

    Voxel (i, j, k) sits at origin + voxel_size * (i, j, k).
    """
    origin: np.ndarray
    voxel_size: float
    truncation: float
    tsdf: np.ndarray
    weight: np.ndarray
    color: np.ndarray

    @classmethod
    def allocate(cls, origin: np.ndarray, voxel_size: float, dims: Tuple[int, int, int],
                 truncation: float) -> 'TsdfVolume':
        dims = tuple(int(d) for d in dims)
        return cls(
            origin=np.asarray(origin, dtype=np.float64),
            voxel_size=float(voxel_size),
            truncation=float(truncation),
            tsdf=np.ones(dims, dtype=np.float64) * truncation,
            weight=np.zeros(dims, dtype=np.float64),
            color=np.zeros(dims + (3,), dtype=np.float32),
        )

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.tsdf.shape)

    @property
    def voxel_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def observed(self) -> np.ndarray:
        return self.weight > 0

    def voxel_centers(self, index: np.ndarray) -> np.ndarray:
        """World coordinates of voxels given integer (or fractional) grid indices (N, 3)"""
        return self.origin + self.voxel_size * np.asarray(index, dtype=np.float64)


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with optional per-vertex colours in [0, 1]"""
    vertices: np.ndarray
    triangles: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.vertices)):
            raise ContractException("mesh has non-finite vertices")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ContractException("triangle index out of range")
        if self.colors is not None and self.colors.shape != self.vertices.shape:
            raise ContractException("vertex colours must match vertices")

    @classmethod
    def empty(cls) -> 'TriangleMesh':
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def to_trimesh(self) -> trimesh.Trimesh:
        colors = None
        if self.colors is not None:
            colors = np.round(np.clip(self.colors, 0.0, 1.0) * 255).astype(np.uint8)
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles,
                               vertex_colors=colors, process=False)

    def euler_characteristic(self) -> int:
        """V - E + F of the merged mesh"""
        mesh = self.to_trimesh()
        mesh.merge_vertices()
        return int(mesh.euler_number)

    def submesh(self, keep: np.ndarray) -> 'TriangleMesh':
        """Keep the selected triangles and drop vertices no longer referenced"""
        triangles = self.triangles[keep]
        used = np.unique(triangles)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        colors = self.colors[used] if self.colors is not None else None
        return TriangleMesh(self.vertices[used], remap[triangles], colors)

    def sample_surface(self, count: int, seed: int = 0) -> np.ndarray:
        """Area-uniform surface samples"""
        if self.is_empty:
            return np.zeros((0, 3))
        points, _ = trimesh.sample.sample_surface(self.to_trimesh(), count, seed=seed)
        return np.asarray(points, dtype=np.float64)
