import os

import numpy as np
import trimesh
from plyfile import PlyData, PlyElement

from core.exceptions import FormatException
from models.mesh import TriangleMesh
from storage.base import AtomicFileMixin, BaseStorage
from storage.ply_storage import check_payload, read_header


class MeshPlyStorage(BaseStorage, AtomicFileMixin):
    """Triangle meshes as binary little-endian PLY with double vertices and uchar colours"""

    extensions = ('.ply',)

    def get_name(self) -> str:
        return "mesh_ply"

    def save(self, mesh: TriangleMesh, path: str) -> str:
        vertex_dtype = [('x', 'f8'), ('y', 'f8'), ('z', 'f8')]
        if mesh.colors is not None:
            vertex_dtype += [('red', 'u1'), ('green', 'u1'), ('blue', 'u1')]
        vertices = np.empty(len(mesh.vertices), dtype=vertex_dtype)
        for i, name in enumerate('xyz'):
            vertices[name] = mesh.vertices[:, i]
        if mesh.colors is not None:
            rgb = np.round(np.clip(mesh.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
            for i, name in enumerate(('red', 'green', 'blue')):
                vertices[name] = rgb[:, i]
        faces = np.empty(len(mesh.triangles), dtype=[('vertex_indices', 'i4', (3,))])
        faces['vertex_indices'] = mesh.triangles
        elements = [
            PlyElement.describe(vertices, 'vertex'),
            PlyElement.describe(faces, 'face', len_types={'vertex_indices': 'u1'},
                                val_types={'vertex_indices': 'i4'}),
        ]
        with self._atomic_path(path) as tmp:
            PlyData(elements, byte_order='<').write(tmp)
        self.logger.info(f"Saved mesh with {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles to {path}")
        return path

    def load(self, path: str) -> TriangleMesh:
        if not os.path.exists(path):
            raise FormatException(f"Mesh file not found: {path}")
        properties = check_payload(path, 'vertex')
        for name in 'xyz':
            if name not in properties:
                raise FormatException(f"{path}: missing vertex property {name}")
        try:
            ply = PlyData.read(path)
        except Exception as e:
            raise FormatException(f"{path}: {e}", byte_offset=read_header(path)[0])
        vertex = ply['vertex']
        vertices = np.stack([np.asarray(vertex[name], dtype=np.float64) for name in 'xyz'], axis=1)
        colors = None
        if all(name in properties for name in ('red', 'green', 'blue')):
            colors = np.stack([np.asarray(vertex[name], dtype=np.float64) for name in ('red', 'green', 'blue')],
                              axis=1) / 255.0
        triangles = np.zeros((0, 3), dtype=np.int64)
        if 'face' in [el.name for el in ply.elements] and ply['face'].count:
            rows = ply['face']['vertex_indices']
            if any(len(row) != 3 for row in rows):
                raise FormatException(f"{path}: only triangle faces are supported")
            triangles = np.stack([np.asarray(row, dtype=np.int64) for row in rows])
        return TriangleMesh(vertices, triangles, colors)


class MeshObjStorage(BaseStorage, AtomicFileMixin):
    """Geometry-only Wavefront OBJ"""

    extensions = ('.obj',)

    def get_name(self) -> str:
        return "mesh_obj"

    def save(self, mesh: TriangleMesh, path: str) -> str:
        if mesh.is_empty:
            text = "# empty mesh\n"
        else:
            text = trimesh.exchange.obj.export_obj(
                TriangleMesh(mesh.vertices, mesh.triangles).to_trimesh(),
                include_normals=False, include_color=False, include_texture=False, digits=17)
        with self._atomic_path(path) as tmp:
            with open(tmp, 'w') as f:
                f.write(text)
        self.logger.info(f"Saved mesh with {len(mesh.triangles)} triangles to {path}")
        return path

    def load(self, path: str) -> TriangleMesh:
        if not os.path.exists(path):
            raise FormatException(f"Mesh file not found: {path}")
        with open(path, 'r') as f:
            if not any(line.startswith('f ') for line in f):
                return TriangleMesh.empty()
        try:
            loaded = trimesh.load(path, file_type='obj', force='mesh', process=False, maintain_order=True)
        except Exception as e:
            raise FormatException(f"{path}: {e}")
        return TriangleMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces))
