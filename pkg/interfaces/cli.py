import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.config import PRESETS, TrainConfig
from core.exceptions import (
    CheckpointException, ConfigurationException, ContractException, FormatException, IngestException,
    InitializationException, NumericalException, ParameterCorruptionException, RenderException,
    ResourceException, SplatException, UndefinedMetricException, UsageException,
)
from core.trainer import SplatTrainer
from density.control import post_train_occlusion_prune
from ingest.initialization import init_splats
from ingest.views import load_dataset, write_image
from interfaces.base import BaseInterface
from mesher.cull import cull_mesh_by_masks
from mesher.marching import marching_cubes
from mesher.tsdf import fuse_bounded, fuse_object
from metrics.census import occlusion_census
from metrics.chamfer import DEFAULT_SAMPLES, chamfer_distance
from metrics.heatmap import write_heatmaps
from metrics.image_metrics import format_psnr, masked_psnr, masked_ssim
from models.camera import CameraView
from rasterizer.binning import RasterSettings
from rasterizer.renderer import render_forward
from storage.factory import StorageFactory, load_splats, save_splats
from storage.metrics_log import MetricsLog, write_records
from storage.ply_storage import load_points
from synth.factory import SceneFactory
from synth.writer import write_scene
from utils.logging_utils import banner, init_logging
from utils.parallel import set_threads

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

EXIT_CODES = (
    ((ConfigurationException, UsageException), EXIT_USAGE),
    ((IngestException, InitializationException, FormatException, CheckpointException,
      ResourceException, UndefinedMetricException), EXIT_DATA),
    ((ParameterCorruptionException, RenderException, ContractException, NumericalException), EXIT_NUMERICAL),
)


def exit_code_for(error: BaseException) -> int:
    for classes, code in EXIT_CODES:
        if isinstance(error, classes):
            return code
    if isinstance(error, OSError):
        return EXIT_DATA
    return EXIT_NUMERICAL


def error_record(error: BaseException) -> Dict[str, Any]:
    return {'error': type(error).__name__, 'message': str(error), 'exit_code': exit_code_for(error)}


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises UsageException instead of exiting"""

    def error(self, message: str):
        raise UsageException(f"{self.prog}: {message}")


def parse_color(text: str) -> Tuple[float, float, float]:
    try:
        values = tuple(float(c) for c in text.split(','))
    except ValueError:
        raise UsageException(f"Invalid colour '{text}', expected r,g,b")
    if len(values) != 3:
        raise UsageException(f"Invalid colour '{text}', expected r,g,b")
    return values


def load_camera(source: str, index: int = 0) -> CameraView:
    """Camera from a JSON file or inline JSON; lists are indexed"""
    text = source
    if not source.lstrip().startswith(('{', '[')):
        if not os.path.exists(source):
            raise IngestException(f"Camera file not found: {source}")
        with open(source, 'r') as f:
            text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatException(f"Camera description is not valid JSON: {e.msg}", byte_offset=e.pos)
    if isinstance(data, list):
        if not 0 <= index < len(data):
            raise UsageException(f"Camera index {index} out of range (0..{len(data) - 1})")
        data = data[index]
    return CameraView.from_dict(data)


class CLIInterface(BaseInterface):
    """Command line interface"""

    commands = ('train', 'render', 'census', 'prune', 'mesh', 'eval', 'synth')

    def run(self, args: Optional[List[str]] = None) -> int:
        """Run one subcommand; returns the process exit code"""
        try:
            parser = self._create_parser()
            parsed_args = parser.parse_args(args)
            if not parsed_args.command:
                raise UsageException("a command is required: " + ", ".join(self.commands))
            init_logging(debug=parsed_args.debug, log_file=parsed_args.log_file or self.config.log_file,
                         level=self.config.log_level)
            set_threads(parsed_args.threads or self.config.threads)
            results = getattr(self, f"_{parsed_args.command}")(parsed_args)
            self.display_results(results)
            return EXIT_OK
        except SystemExit as e:
            # --help
            return EXIT_OK if not e.code else EXIT_USAGE
        except SplatException as e:
            return self._fail(e)
        except OSError as e:
            return self._fail(e)
        except Exception as e:
            logger.exception("Unexpected failure")
            return self._fail(e)

    def _fail(self, error: BaseException) -> int:
        record = error_record(error)
        print(json.dumps(record), file=sys.stderr)
        return record['exit_code']

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create argument parser"""
        common = ArgumentParser(add_help=False)
        common.add_argument('--threads', type=int, help='Cap on worker threads')
        common.add_argument('--debug', action='store_true', help='Enable debug logging')
        common.add_argument('--log-file', help='Also log to this file')

        parser = ArgumentParser(prog='splatcore', description='Object-centric 2D Gaussian splatting')
        subparsers = parser.add_subparsers(dest='command', help='Available commands')

        train_parser = subparsers.add_parser('train', parents=[common], help='Optimize splats on a dataset')
        train_parser.add_argument('--data', required=True, help='Dataset root (sparse model and images)')
        train_parser.add_argument('--masks', help='Directory of object masks (matched by file stem)')
        train_parser.add_argument('--out', required=True, help='Output directory')
        train_parser.add_argument('--config', help="Flat 'key = value' config file")
        train_parser.add_argument('--preset', choices=sorted(PRESETS), help='Ablation preset')
        train_parser.add_argument('--gamma', type=float, help='Background loss weight')
        train_parser.add_argument('--no-masking', action='store_true', help='Disable mask-based training')
        train_parser.add_argument('--no-occlusion-prune', action='store_true', help='Disable occlusion pruning')
        train_parser.add_argument('--iterations', type=int, help='Number of iterations')
        train_parser.add_argument('--seed', type=int, help='Random seed')
        train_parser.add_argument('--deterministic', action='store_true', help='Require bit-reproducible runs')
        train_parser.add_argument('--precision', choices=['float32', 'float64'], help='Parameter precision')
        train_parser.add_argument('--checkpoint-interval', type=int, help='Save a checkpoint every N iterations')
        train_parser.add_argument('--resume', help='Checkpoint to resume from')
        train_parser.add_argument('--stop-after', type=int, help='Stop (and checkpoint) after this iteration')

        render_parser = subparsers.add_parser('render', parents=[common], help='Render a model from a camera')
        render_parser.add_argument('--model', required=True, help='Splat PLY')
        render_parser.add_argument('--camera', required=True, help='Camera JSON file or inline JSON')
        render_parser.add_argument('--index', type=int, default=0, help='Camera index when --camera holds a list')
        render_parser.add_argument('--out', required=True, help='Output PNG')
        render_parser.add_argument('--background', type=parse_color, default=(0.0, 0.0, 0.0), help='r,g,b')

        census_parser = subparsers.add_parser('census', parents=[common], help='Count never-visible splats')
        census_parser.add_argument('--model', required=True, help='Splat PLY')
        census_parser.add_argument('--data', required=True, help='Dataset root')
        census_parser.add_argument('--report', required=True, help='Report file (NDJSON)')
        census_parser.add_argument('--heatmap', help='Directory for per-view occlusion heatmaps')
        census_parser.add_argument('--background', type=parse_color, default=(0.0, 0.0, 0.0), help='r,g,b')

        prune_parser = subparsers.add_parser('prune', parents=[common], help='Post-training occlusion prune')
        prune_parser.add_argument('--model', required=True, help='Splat PLY')
        prune_parser.add_argument('--data', required=True, help='Dataset root')
        prune_parser.add_argument('--out', required=True, help='Pruned splat PLY')
        prune_parser.add_argument('--background', type=parse_color, default=(0.0, 0.0, 0.0), help='r,g,b')

        mesh_parser = subparsers.add_parser('mesh', parents=[common], help='Extract a mesh by TSDF fusion')
        mesh_parser.add_argument('--model', required=True, help='Splat PLY')
        mesh_parser.add_argument('--data', required=True, help='Dataset root')
        mesh_parser.add_argument('--mode', choices=['bounded', 'object'], default='object', help='Fusion mode')
        mesh_parser.add_argument('--voxel-size', type=float, help='Voxel size (bounded mode)')
        mesh_parser.add_argument('--dtrunc', type=float, help='Depth truncation (bounded mode)')
        mesh_parser.add_argument('--masks', help='Object masks; truncate depth in bounded mode')
        mesh_parser.add_argument('--cull', action='store_true', help='Cull triangles outside the masks')
        mesh_parser.add_argument('--out', required=True, help='Output mesh (.ply or .obj)')

        eval_parser = subparsers.add_parser('eval', parents=[common], help='Masked image metrics or chamfer')
        eval_parser.add_argument('metric', nargs='?', choices=['images', 'chamfer'], default='images')
        eval_parser.add_argument('--gt', help='Dataset root with ground-truth images')
        eval_parser.add_argument('--model', help='Splat PLY')
        eval_parser.add_argument('--masks', help='Object masks')
        eval_parser.add_argument('--background', type=parse_color, default=(0.0, 0.0, 0.0), help='r,g,b')
        eval_parser.add_argument('--mesh', help='Mesh (.ply or .obj) for chamfer')
        eval_parser.add_argument('--ref-points', help='Reference point PLY for chamfer')
        eval_parser.add_argument('--samples', type=int, default=DEFAULT_SAMPLES, help='Mesh surface samples')
        eval_parser.add_argument('--seed', type=int, default=0, help='Surface sampling seed')
        eval_parser.add_argument('--report', help='Report file (NDJSON)')

        synth_parser = subparsers.add_parser('synth', parents=[common], help='Write a synthetic dataset')
        synth_parser.add_argument('scene', choices=SceneFactory.get_available_types())
        synth_parser.add_argument('--out', required=True, help='Output directory')
        synth_parser.add_argument('--seed', type=int, default=0, help='Generator seed')
        synth_parser.add_argument('--views', type=int, help='Number of views')
        synth_parser.add_argument('--size', type=int, help='Image side in pixels')
        synth_parser.add_argument('--no-background', action='store_true', help='Sphere without the floor plane')
        synth_parser.add_argument('--hidden', type=int, help='Hidden splats (occluder)')
        synth_parser.add_argument('--outside', type=int, help='Out-of-frustum splats (occluder)')
        synth_parser.add_argument('--defect-rate', type=float, help='Fraction of views with mask defects')
        synth_parser.add_argument('--defect-mode', choices=['erode', 'dilate'], help='Mask defect kind')
        synth_parser.add_argument('--consistent-hole', action='store_true',
                                  help='Cut the same hole out of every defective mask')

        return parser

    def _train_config(self, args) -> TrainConfig:
        config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        if args.preset:
            config = config.with_preset(args.preset)
        return config.with_overrides(
            gamma_coeff=args.gamma,
            use_masks=False if args.no_masking else None,
            occlusion_pruning=False if args.no_occlusion_prune else None,
            iterations=args.iterations,
            seed=args.seed,
            deterministic=True if args.deterministic else None,
            precision=args.precision,
            checkpoint_interval=args.checkpoint_interval,
        )

    def _train(self, args) -> Dict[str, Any]:
        config = self._train_config(args)
        if config.use_masks and not args.masks:
            raise UsageException("--masks is required unless --no-masking is given")
        model, views = load_dataset(args.data, args.masks, workers=args.threads)

        trainer = SplatTrainer(config)
        trainer.set_output_dir(args.out)
        checkpoint = trainer.load_checkpoint(args.resume) if args.resume else None
        dtype = np.float32 if config.precision == "float32" else np.float64
        init = init_splats(model, sh_degree=config.sh_degree_max, dtype=dtype)
        config.to_file(os.path.join(args.out, 'config.txt'))

        metrics_path = self.config.metrics_log or os.path.join(args.out, 'metrics.ndjson')
        with MetricsLog(metrics_path, append=checkpoint is not None) as metrics_log:
            trainer.set_metrics_log(metrics_log)
            splats, result = trainer.train(views, init, checkpoint=checkpoint, stop_after=args.stop_after)

        model_path = save_splats(splats, os.path.join(args.out, 'model.ply'))
        record = result.as_record()
        if result.final_losses is not None:
            record.update({f'loss_{k}': v for k, v in result.final_losses.as_dict().items()})
        write_records(os.path.join(args.out, 'report.ndjson'), [record])
        return {'command': 'train', 'model': model_path, **record}

    def _render(self, args) -> Dict[str, Any]:
        splats = load_splats(args.model)
        camera = load_camera(args.camera, args.index)
        output = render_forward(splats, camera, args.background)
        path = write_image(output.color, args.out)
        return {'command': 'render', 'image': path, 'width': camera.width, 'height': camera.height,
                'contributing_splats': int(output.contributed.sum())}

    def _census(self, args) -> Dict[str, Any]:
        splats = load_splats(args.model)
        _, views = load_dataset(args.data, workers=args.threads)
        report = occlusion_census(splats, views, args.background, RasterSettings())
        write_records(args.report, [report.as_record()])
        results = {'command': 'census', 'report': args.report, **report.as_record()}
        if args.heatmap:
            paths = write_heatmaps(splats, report.occluded_indices, views, args.heatmap)
            results['heatmaps'] = len(paths)
        return results

    def _prune(self, args) -> Dict[str, Any]:
        splats = load_splats(args.model)
        _, views = load_dataset(args.data, workers=args.threads)
        pruned, report = post_train_occlusion_prune(splats, views, args.background, RasterSettings())
        path = save_splats(pruned, args.out)
        return {'command': 'prune', 'model': path, 'kept': pruned.count, **report.as_record()}

    def _mesh(self, args) -> Dict[str, Any]:
        if args.cull and not args.masks:
            raise UsageException("--cull needs --masks")
        splats = load_splats(args.model)
        _, views = load_dataset(args.data, args.masks, workers=args.threads)
        if args.mode == 'bounded':
            if args.voxel_size is None or args.dtrunc is None:
                raise UsageException("bounded mode needs --voxel-size and --dtrunc")
            volume = fuse_bounded(splats, views, args.voxel_size, args.dtrunc, use_masks=bool(args.masks),
                                  voxel_budget=self.config.voxel_budget)
        else:
            if args.voxel_size is not None or args.dtrunc is not None:
                logger.warning("object mode chooses its own grid; --voxel-size and --dtrunc are ignored")
            volume = fuse_object(splats, views, voxel_budget=self.config.voxel_budget)
        mesh = marching_cubes(volume)
        if args.cull:
            mesh = cull_mesh_by_masks(mesh, views)
        path = StorageFactory.for_mesh(args.out).save(mesh, args.out)
        return {'command': 'mesh', 'mesh': path, 'mode': args.mode, 'voxel_size': volume.voxel_size,
                'vertices': len(mesh.vertices), 'triangles': len(mesh.triangles)}

    def _eval(self, args) -> Dict[str, Any]:
        if args.metric == 'chamfer':
            return self._eval_chamfer(args)
        missing = [flag for flag, value in (('--gt', args.gt), ('--model', args.model), ('--masks', args.masks))
                   if not value]
        if missing:
            raise UsageException(f"eval needs {', '.join(missing)}")
        splats = load_splats(args.model)
        _, views = load_dataset(args.gt, args.masks, workers=args.threads)

        records = []
        for view in views:
            if not view.has_object:
                logger.warning(f"View {view.index} ({view.name}) has an empty mask; skipped")
                continue
            output = render_forward(splats, view.camera, args.background)
            records.append({
                'view': view.index,
                'name': view.name,
                'masked_psnr': masked_psnr(view.image, output.color, view.mask),
                'masked_ssim': masked_ssim(view.image, output.color, view.mask),
            })
        if not records:
            raise UndefinedMetricException("every mask is empty; masked metrics are undefined")
        summary = {
            'view': 'mean',
            'name': None,
            'masked_psnr': float(np.mean([r['masked_psnr'] for r in records])),
            'masked_ssim': float(np.mean([r['masked_ssim'] for r in records])),
        }
        if args.report:
            write_records(args.report, records + [summary])
        return {'command': 'eval', 'views': len(records), 'masked_psnr': format_psnr(summary['masked_psnr']),
                'masked_ssim': round(summary['masked_ssim'], 6)}

    def _eval_chamfer(self, args) -> Dict[str, Any]:
        if not args.mesh or not args.ref_points:
            raise UsageException("eval chamfer needs --mesh and --ref-points")
        mesh = StorageFactory.for_mesh(args.mesh).load(args.mesh)
        reference = load_points(args.ref_points)
        distance = chamfer_distance(mesh, reference, samples=args.samples, seed=args.seed)
        record = {'chamfer': distance, 'samples': args.samples, 'reference_points': len(reference)}
        if args.report:
            write_records(args.report, [record])
        return {'command': 'eval chamfer', **record}

    def _synth(self, args) -> Dict[str, Any]:
        options = {
            'sphere': {'n_views': args.views, 'size': args.size,
                       'with_background': False if args.no_background else None},
            'occluder': {'n_views': args.views, 'size': args.size, 'n_hidden': args.hidden,
                         'n_outside': args.outside},
            'badmask': {'n_views': args.views, 'size': args.size,
                        'with_background': False if args.no_background else None,
                        'defect_rate': args.defect_rate, 'mode': args.defect_mode,
                        'consistent': True if args.consistent_hole else None},
        }[args.scene]
        kwargs = {k: v for k, v in options.items() if v is not None}
        scene = SceneFactory.create(args.scene, seed=args.seed, **kwargs)
        paths = write_scene(scene, args.out)
        return {'command': 'synth', 'scene': scene.name, 'out': args.out, 'views': len(scene.views),
                'files': len(paths)}

    def display_results(self, results: Dict[str, Any]):
        """Display a command's summary record"""
        title = results.get('command', 'result')
        print(f"\n=== {title} ===")
        for key, value in results.items():
            if key == 'command':
                continue
            print(f"{key}: {value}")
        banner(f"{title} finished")
