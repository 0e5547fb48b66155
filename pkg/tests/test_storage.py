import json
import os
import tempfile

import numpy as np
import pytest
from plyfile import PlyData, PlyElement

from core.exceptions import CheckpointException, ConfigurationException, FormatException
from core.optimizer import OptimizerState
from models.mesh import TriangleMesh
from models.results import DensityCounters
from models.splats import SplatSet
from storage.checkpoint_storage import Checkpoint, CheckpointStorage
from storage.factory import StorageFactory, load_splats, save_splats
from storage.metrics_log import MetricsLog, read_records, write_records
from storage.ply_storage import load_points, save_points
from tests.conftest import random_splats


def tetrahedron(colors: bool = False) -> TriangleMesh:
    rng = np.random.default_rng(0)
    vertices = rng.uniform(-1.0, 1.0, size=(4, 3))
    triangles = np.array([[0, 1, 2], [0, 3, 1], [1, 3, 2], [0, 2, 3]])
    rgb = rng.integers(0, 256, size=(4, 3)) / 255.0 if colors else None
    return TriangleMesh(vertices, triangles, rgb)


class TestSplatPly:
    """Test splat PLY save and load"""

    def test_round_trip_is_bit_exact(self):
        """Test parameters and statistics survive save and load unchanged"""
        splats = random_splats(25, seed=1, sh_degree=3)
        splats.grad_accum[:] = np.linspace(0.0, 1.0, 25)
        splats.grad_count[:] = np.arange(25)
        splats.seen_since_prune[::2] = True
        splats.max_radius[:] = 3.5
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_splats(splats, os.path.join(temp_dir, 'splats.ply'))
            loaded = load_splats(path)
        assert loaded.equals(splats)
        assert loaded.sh_degree == 3

    def test_float32_round_trip(self):
        """Test single-precision sets are stored as float and reload as float32"""
        splats = random_splats(10, seed=2, sh_degree=1).astype(np.float32)
        with tempfile.TemporaryDirectory() as temp_dir:
            loaded = load_splats(save_splats(splats, os.path.join(temp_dir, 's.ply')))
        assert loaded.dtype == np.float32
        assert loaded.equals(splats)

    def test_empty_set(self):
        """Test a set without splats round-trips"""
        with tempfile.TemporaryDirectory() as temp_dir:
            loaded = load_splats(save_splats(SplatSet.empty(sh_degree=0), os.path.join(temp_dir, 'e.ply')))
        assert loaded.count == 0

    def test_truncated_payload(self):
        """Test a cut file reports the offset where data ran out"""
        splats = random_splats(8, seed=3)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_splats(splats, os.path.join(temp_dir, 'cut.ply'))
            with open(path, 'rb') as f:
                data = f.read()
            with open(path, 'wb') as f:
                f.write(data[:-10])
            with pytest.raises(FormatException) as exc:
                load_splats(path)
        assert exc.value.byte_offset == len(data) - 10

    def test_missing_properties(self):
        """Test a bare point cloud is not a splat file"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_points(np.zeros((3, 3)), os.path.join(temp_dir, 'points.ply'))
            with pytest.raises(FormatException) as exc:
                load_splats(path)
        assert 'f_dc_0' in str(exc.value)

    def test_ascii_is_rejected(self):
        """Test only binary little-endian files are accepted"""
        vertices = np.zeros(2, dtype=[('x', 'f8'), ('y', 'f8'), ('z', 'f8')])
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, 'ascii.ply')
            PlyData([PlyElement.describe(vertices, 'vertex')], text=True).write(path)
            with pytest.raises(FormatException) as exc:
                load_points(path)
        assert exc.value.byte_offset == len(b'ply\n')

    def test_not_a_ply(self):
        """Test foreign files fail at offset zero"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, 'bogus.ply')
            with open(path, 'wb') as f:
                f.write(b'solid cube\n')
            with pytest.raises(FormatException) as exc:
                load_splats(path)
        assert exc.value.byte_offset == 0

    def test_missing_file(self):
        """Test a missing path is a format error"""
        with pytest.raises(FormatException):
            load_splats('/nonexistent/splats.ply')

    def test_points_round_trip(self):
        """Test point clouds keep double precision"""
        points = np.random.default_rng(4).normal(size=(30, 3))
        with tempfile.TemporaryDirectory() as temp_dir:
            loaded = load_points(save_points(points, os.path.join(temp_dir, 'p.ply')))
        np.testing.assert_array_equal(loaded, points)


class TestMeshStorage:
    """Test PLY and OBJ mesh export"""

    def test_ply_round_trip(self):
        """Test vertices, triangles and 8-bit colours survive"""
        mesh = tetrahedron(colors=True)
        with tempfile.TemporaryDirectory() as temp_dir:
            storage = StorageFactory.for_mesh('mesh.ply')
            loaded = storage.load(storage.save(mesh, os.path.join(temp_dir, 'mesh.ply')))
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)
        np.testing.assert_array_equal(loaded.colors, mesh.colors)

    def test_obj_round_trip(self):
        """Test OBJ keeps geometry to full precision"""
        mesh = tetrahedron()
        with tempfile.TemporaryDirectory() as temp_dir:
            storage = StorageFactory.for_mesh('mesh.obj')
            loaded = storage.load(storage.save(mesh, os.path.join(temp_dir, 'mesh.obj')))
        np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-15)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)

    def test_empty_obj(self):
        """Test an empty mesh writes and reads back empty"""
        with tempfile.TemporaryDirectory() as temp_dir:
            storage = StorageFactory.create('mesh_obj')
            loaded = storage.load(storage.save(TriangleMesh.empty(), os.path.join(temp_dir, 'empty.obj')))
        assert loaded.is_empty

    def test_unsupported_extension(self):
        """Test mesh formats other than PLY and OBJ are refused"""
        with pytest.raises(ConfigurationException):
            StorageFactory.for_mesh('mesh.stl')


class TestCheckpointStorage:
    """Test checkpoint save and load"""

    @pytest.fixture
    def checkpoint(self):
        splats = random_splats(6, seed=5)
        optimizer = OptimizerState.zeros_like(splats)
        optimizer.step = 42
        optimizer.exp_avg['position'][:] = 0.25
        return Checkpoint(
            splats=splats,
            optimizer=optimizer,
            iteration=42,
            seed=7,
            extent=1.0 / 3.0,
            rng_state=np.random.default_rng(7).bit_generator.state,
            schedule={'order': [2, 0, 1], 'position': 1, 'epoch': 3},
            counters=DensityCounters(cloned=2, split=1, pruned_transparent=3),
            initial_count=9,
            config={'iterations': 100},
        )

    def test_round_trip(self, checkpoint):
        """Test every field is restored exactly"""
        storage = StorageFactory.create('checkpoint')
        with tempfile.TemporaryDirectory() as temp_dir:
            loaded = storage.load(storage.save(checkpoint, os.path.join(temp_dir, 'ckpt.npz')))
        assert loaded.splats.equals(checkpoint.splats)
        assert loaded.optimizer.step == 42
        np.testing.assert_array_equal(loaded.optimizer.exp_avg['position'], checkpoint.optimizer.exp_avg['position'])
        assert loaded.extent == checkpoint.extent
        assert loaded.rng_state == checkpoint.rng_state
        assert loaded.schedule == checkpoint.schedule
        assert loaded.counters == checkpoint.counters
        assert loaded.initial_count == 9
        assert loaded.config == {'iterations': 100}

    def test_unsupported_version(self, checkpoint):
        """Test a newer checkpoint version is refused"""
        storage = CheckpointStorage()
        with tempfile.TemporaryDirectory() as temp_dir:
            path = storage.save(checkpoint, os.path.join(temp_dir, 'ckpt.npz'))
            with np.load(path) as data:
                arrays = {key: np.array(data[key]) for key in data.files}
            meta = json.loads(str(arrays['meta']))
            meta['version'] = 99
            arrays['meta'] = np.array(json.dumps(meta))
            with open(path, 'wb') as f:
                np.savez(f, **arrays)
            with pytest.raises(CheckpointException) as exc:
                storage.load(path)
        assert 'version 99' in str(exc.value)

    def test_garbage_file(self):
        """Test a file that is not an archive is refused"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, 'ckpt.npz')
            with open(path, 'wb') as f:
                f.write(b'garbage')
            with pytest.raises(CheckpointException):
                CheckpointStorage().load(path)

    def test_missing_file(self):
        """Test a missing checkpoint raises"""
        with pytest.raises(CheckpointException):
            CheckpointStorage().load('/nonexistent/ckpt.npz')


class TestMetricsLog:
    """Test NDJSON metric records"""

    def test_write_and_read(self):
        """Test records come back in order, infinities included"""
        records = [{'iteration': 1, 'total': 0.5}, {'iteration': 2, 'psnr': float('inf')}]
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, 'logs', 'metrics.ndjson')
            write_records(path, records)
            assert read_records(path) == records

    def test_append(self):
        """Test append mode keeps earlier records"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, 'metrics.ndjson')
            write_records(path, [{'iteration': 1}])
            with MetricsLog(path, append=True) as log:
                log.write({'iteration': 2})
            assert [r['iteration'] for r in read_records(path)] == [1, 2]

    def test_without_path(self):
        """Test a log without a path silently drops records"""
        with MetricsLog(None) as log:
            log.write({'iteration': 1})


class TestStorageFactory:
    """Test storage backend lookup"""

    def test_available_types(self):
        """Test every backend is registered"""
        assert set(StorageFactory.get_available_types()) >= {'splats', 'mesh_ply', 'mesh_obj', 'checkpoint'}

    def test_unknown_type(self):
        """Test unknown backend names raise"""
        with pytest.raises(ConfigurationException):
            StorageFactory.create('mongodb')

    def test_handles(self):
        """Test backends recognize their extensions"""
        assert StorageFactory.create('checkpoint').handles('run/checkpoint_000010.npz')
        assert not StorageFactory.create('checkpoint').handles('run/splats.ply')
