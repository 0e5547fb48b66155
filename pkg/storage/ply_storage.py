import os
from typing import Dict, List, Tuple

import numpy as np
from plyfile import PlyData, PlyElement

from core.exceptions import FormatException
from models.splats import SplatSet, sh_count
from storage.base import AtomicFileMixin, BaseStorage

PLY_TYPE_SIZES = {
    'char': 1, 'int8': 1, 'uchar': 1, 'uint8': 1,
    'short': 2, 'int16': 2, 'ushort': 2, 'uint16': 2,
    'int': 4, 'int32': 4, 'uint': 4, 'uint32': 4,
    'float': 4, 'float32': 4, 'double': 8, 'float64': 8,
}

REQUIRED_PROPERTIES = ('x', 'y', 'z', 'f_dc_0', 'f_dc_1', 'f_dc_2', 'opacity',
                       'scale_0', 'scale_1', 'rot_0', 'rot_1', 'rot_2', 'rot_3')

# training statistics; optional when loading third-party files
STAT_PROPERTIES = (('grad_accum', 'f8'), ('grad_count', 'i4'), ('seen', 'u1'), ('max_radius', 'f8'))


def read_header(path: str) -> Tuple[int, Dict[str, Tuple[int, List[Tuple[str, str]]]], bytes]:
    """Scan a PLY header; returns (payload offset, {element: (count, [(type, name)])}, raw bytes)

    Only scalar properties are sized; list properties make the element size unknown (-1 count).
    """
    with open(path, 'rb') as f:
        data = f.read()
    if not data.startswith(b'ply'):
        raise FormatException(f"{path}: not a PLY file", byte_offset=0)
    marker = data.find(b'end_header')
    if marker < 0:
        raise FormatException(f"{path}: header has no end_header", byte_offset=len(data))
    newline = data.find(b'\n', marker)
    if newline < 0:
        raise FormatException(f"{path}: header is truncated", byte_offset=len(data))
    payload_offset = newline + 1

    elements: Dict[str, Tuple[int, List[Tuple[str, str]]]] = {}
    current = None
    offset = 0
    for raw in data[:payload_offset].split(b'\n'):
        line = raw.decode('ascii', errors='replace').strip()
        parts = line.split()
        if not parts:
            offset += len(raw) + 1
            continue
        if parts[0] == 'format' and (len(parts) < 2 or parts[1] != 'binary_little_endian'):
            raise FormatException(f"{path}: expected binary_little_endian, got '{line}'", byte_offset=offset)
        if parts[0] == 'element':
            try:
                current = parts[1]
                elements[current] = (int(parts[2]), [])
            except (IndexError, ValueError):
                raise FormatException(f"{path}: malformed element line '{line}'", byte_offset=offset)
        elif parts[0] == 'property':
            if current is None or len(parts) < 3:
                raise FormatException(f"{path}: malformed property line '{line}'", byte_offset=offset)
            if parts[1] == 'list':
                elements[current][1].append(('list', parts[-1]))
            elif parts[1] not in PLY_TYPE_SIZES:
                raise FormatException(f"{path}: unknown property type '{parts[1]}'", byte_offset=offset)
            else:
                elements[current][1].append((parts[1], parts[2]))
        offset += len(raw) + 1
    return payload_offset, elements, data


def check_payload(path: str, element: str) -> Dict[str, str]:
    """Validate header and payload length of a single scalar element; returns {name: type}"""
    payload_offset, elements, data = read_header(path)
    if element not in elements:
        raise FormatException(f"{path}: no '{element}' element", byte_offset=payload_offset)
    count, properties = elements[element]
    if any(kind == 'list' for kind, _ in properties):
        return {name: kind for kind, name in properties}
    row = sum(PLY_TYPE_SIZES[kind] for kind, _ in properties)
    expected = payload_offset + count * row
    if len(data) < expected:
        raise FormatException(
            f"{path}: payload truncated, expected {count} rows of {row} bytes", byte_offset=len(data))
    return {name: kind for kind, name in properties}


class SplatPlyStorage(BaseStorage, AtomicFileMixin):
    """Splat sets as binary little-endian point-cloud PLY in the common splat layout"""

    extensions = ('.ply',)

    def get_name(self) -> str:
        return "splat_ply"

    @staticmethod
    def attribute_names(sh_degree: int) -> List[str]:
        names = ['x', 'y', 'z', 'nx', 'ny', 'nz', 'f_dc_0', 'f_dc_1', 'f_dc_2']
        names += [f'f_rest_{i}' for i in range(3 * (sh_count(sh_degree) - 1))]
        names.append('opacity')
        names += ['scale_0', 'scale_1']
        names += [f'rot_{i}' for i in range(4)]
        return names

    def save(self, splats: SplatSet, path: str) -> str:
        splats.check_consistency()
        m = splats.count
        kind = 'f4' if splats.dtype == np.float32 else 'f8'
        f_dc = splats.sh_coeffs[:, 0, :]
        # channel-major: all rest coefficients of red, then green, then blue
        rest = 3 * (splats.sh_coeffs.shape[1] - 1)
        f_rest = splats.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(m, rest)
        columns = [splats.position, np.zeros_like(splats.position), f_dc, f_rest,
                   splats.opacity_logit[:, None], splats.log_scale, splats.rotation]
        values = np.concatenate(columns, axis=1)

        dtype_full = [(name, kind) for name in self.attribute_names(splats.sh_degree)]
        dtype_full += list(STAT_PROPERTIES)
        elements = np.empty(m, dtype=dtype_full)
        for i, name in enumerate(self.attribute_names(splats.sh_degree)):
            elements[name] = values[:, i]
        elements['grad_accum'] = splats.grad_accum
        elements['grad_count'] = splats.grad_count
        elements['seen'] = splats.seen_since_prune
        elements['max_radius'] = splats.max_radius

        with self._atomic_path(path) as tmp:
            PlyData([PlyElement.describe(elements, 'vertex')], byte_order='<').write(tmp)
        self.logger.info(f"Saved {m} splats to {path}")
        return path

    def load(self, path: str) -> SplatSet:
        if not os.path.exists(path):
            raise FormatException(f"Splat file not found: {path}")
        properties = check_payload(path, 'vertex')
        missing = [name for name in REQUIRED_PROPERTIES if name not in properties]
        if missing:
            raise FormatException(f"{path}: missing propert{'y' if len(missing) == 1 else 'ies'} {', '.join(missing)}")
        rest_names = sorted((name for name in properties if name.startswith('f_rest_')),
                            key=lambda name: int(name.split('_')[-1]))
        if len(rest_names) % 3:
            raise FormatException(f"{path}: {len(rest_names)} f_rest properties is not a multiple of 3")
        coeffs = len(rest_names) // 3 + 1
        degree = int(round(np.sqrt(coeffs))) - 1
        if sh_count(degree) != coeffs:
            raise FormatException(f"{path}: {len(rest_names)} f_rest properties do not form a full SH degree")

        try:
            vertex = PlyData.read(path)['vertex']
        except Exception as e:
            raise FormatException(f"{path}: {e}", byte_offset=read_header(path)[0])

        dtype = np.float32 if properties['x'] in ('float', 'float32') else np.float64

        def column(name: str) -> np.ndarray:
            return np.asarray(vertex[name]).astype(dtype)

        def stack(names: List[str]) -> np.ndarray:
            return np.stack([column(name) for name in names], axis=1) if names else np.zeros((vertex.count, 0), dtype=dtype)

        m = vertex.count
        sh = np.zeros((m, coeffs, 3), dtype=dtype)
        sh[:, 0, :] = stack(['f_dc_0', 'f_dc_1', 'f_dc_2'])
        if rest_names:
            sh[:, 1:, :] = stack(rest_names).reshape(m, 3, coeffs - 1).transpose(0, 2, 1)

        def stat(name: str, stat_dtype, default):
            if name in properties:
                return np.asarray(vertex[name]).astype(stat_dtype)
            return np.full(m, default, dtype=stat_dtype)

        splats = SplatSet(
            position=stack(['x', 'y', 'z']),
            rotation=stack([f'rot_{i}' for i in range(4)]),
            log_scale=stack(['scale_0', 'scale_1']),
            opacity_logit=column('opacity'),
            sh_coeffs=sh,
            grad_accum=stat('grad_accum', np.float64, 0.0),
            grad_count=stat('grad_count', np.int64, 0),
            seen_since_prune=stat('seen', bool, False),
            max_radius=stat('max_radius', np.float64, 0.0),
        )
        self.logger.debug(f"Loaded {m} splats (SH degree {degree}) from {path}")
        return splats


def save_points(points: np.ndarray, path: str) -> str:
    """Bare point cloud (double x, y, z) as binary little-endian PLY"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    vertices = np.empty(len(points), dtype=[('x', 'f8'), ('y', 'f8'), ('z', 'f8')])
    for i, name in enumerate('xyz'):
        vertices[name] = points[:, i]
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    PlyData([PlyElement.describe(vertices, 'vertex')], byte_order='<').write(path)
    return path


def load_points(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise FormatException(f"Point file not found: {path}")
    properties = check_payload(path, 'vertex')
    for name in 'xyz':
        if name not in properties:
            raise FormatException(f"{path}: missing vertex property {name}")
    try:
        vertex = PlyData.read(path)['vertex']
    except Exception as e:
        raise FormatException(f"{path}: {e}", byte_offset=read_header(path)[0])
    return np.stack([np.asarray(vertex[name], dtype=np.float64) for name in 'xyz'], axis=1)
