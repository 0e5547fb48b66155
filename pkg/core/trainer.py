import json
import logging
import os
import tempfile
from dataclasses import replace
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import TrainConfig
from core.exceptions import CheckpointException, ConfigurationException, NumericalException
from core.optimizer import AdamOptimizer, OptimizerState
from density.control import DensityController, accumulate_stats
from ingest.initialization import scene_extent
from losses.total import total_loss
from models.camera import TrainingView
from models.results import DensityCounters, IterationRecord, LossBreakdown, TrainResult, TrainStatus
from models.splats import SplatSet
from rasterizer.binning import RasterSettings
from rasterizer.gradients import render_backward
from rasterizer.renderer import render_forward
from storage.checkpoint_storage import Checkpoint, CheckpointStorage
from storage.metrics_log import MetricsLog
from storage.ply_storage import SplatPlyStorage

logger = logging.getLogger(__name__)

# fields that may differ between an interrupted run and its resumption; the schedule follows iterations
RESUMABLE_FIELDS = ('checkpoint_interval', 'log_interval')


class ViewScheduler:
    """Seeded shuffled epochs over the training views"""

    def __init__(self, n_views: int, rng: np.random.Generator):
        self.n_views = n_views
        self.rng = rng
        self.order: List[int] = []
        self.cursor = 0
        self.epoch = 0

    def next(self) -> int:
        if self.cursor >= len(self.order):
            self.order = [int(i) for i in self.rng.permutation(self.n_views)]
            self.cursor = 0
            self.epoch += 1
        index = self.order[self.cursor]
        self.cursor += 1
        return index

    def state(self) -> Dict[str, Any]:
        return {'order': list(self.order), 'cursor': self.cursor, 'epoch': self.epoch}

    def restore(self, state: Dict[str, Any]):
        self.order = [int(i) for i in state.get('order', [])]
        self.cursor = int(state.get('cursor', 0))
        self.epoch = int(state.get('epoch', 0))


def active_sh_degree(config: TrainConfig, iteration: int) -> int:
    """Degree 0 at the start, one more every sh_upgrade_interval iterations"""
    return min(config.sh_degree_max, iteration // config.sh_upgrade_interval)


class SplatTrainer:
    """Main orchestrator for splat optimization"""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.output_dir: Optional[str] = None
        self.metrics_log: Optional[MetricsLog] = None
        self.checkpoint_storage = CheckpointStorage()
        self.settings = RasterSettings.from_config(config)

    def set_output_dir(self, output_dir: str):
        """Directory for checkpoints and diagnostics"""
        os.makedirs(output_dir, exist_ok=True)
        self.output_dir = output_dir

    def set_metrics_log(self, metrics_log: MetricsLog):
        self.metrics_log = metrics_log

    def _check_inputs(self, views: Sequence[TrainingView]):
        if not views:
            raise ConfigurationException("Training needs at least one view")
        if self.config.use_masks and not any(view.has_object for view in views):
            raise ConfigurationException("Every object mask is empty; nothing to train on")

    def _check_resume(self, checkpoint: Checkpoint):
        if not self.config.deterministic or not checkpoint.config:
            return
        current = json.loads(json.dumps(self.config.to_dict()))
        for key, value in checkpoint.config.items():
            if key in RESUMABLE_FIELDS:
                continue
            if current.get(key) != value:
                raise CheckpointException(
                    f"deterministic resume needs the original configuration; '{key}' is {current.get(key)!r}, "
                    f"checkpoint has {value!r}")

    def train(self, views: Sequence[TrainingView], init: SplatSet,
              checkpoint: Optional[Checkpoint] = None,
              stop_after: Optional[int] = None) -> Tuple[SplatSet, TrainResult]:
        """Optimize the splat set against the training views

        Args:
            views: training views (images, masks, cameras)
            init: initial splat set, ignored when resuming from a checkpoint
            checkpoint: resume point
            stop_after: stop (and checkpoint, if an output directory is set) after this iteration

        Returns:
            Trained splats and the run report
        """
        config = self.config
        self._check_inputs(views)
        dtype = np.float32 if config.precision == "float32" else np.float64

        if checkpoint is not None:
            self._check_resume(checkpoint)
            splats = checkpoint.splats.copy()
            start = checkpoint.iteration
            extent = checkpoint.extent
            rng = np.random.default_rng(checkpoint.seed)
            rng.bit_generator.state = checkpoint.rng_state
            optimizer = AdamOptimizer(config, extent, state=checkpoint.optimizer.select(slice(None)))
            counters = replace(checkpoint.counters)
            initial_count = checkpoint.initial_count
        else:
            splats = init.astype(dtype) if config.iterations else init.copy()
            start = 0
            extent = scene_extent([view.camera for view in views])
            rng = np.random.default_rng(config.seed)
            optimizer = AdamOptimizer(config, extent, state=OptimizerState.zeros_like(splats))
            counters = DensityCounters()
            initial_count = init.count

        scheduler = ViewScheduler(len(views), rng)
        if checkpoint is not None:
            scheduler.restore(checkpoint.schedule)
        controller = DensityController(config, extent, rng, optimizer, counters)
        occlusion_interval = config.occlusion_interval_for(len(views))
        last = config.iterations if stop_after is None else min(stop_after, config.iterations)

        result = TrainResult(start_time=datetime.now(), status=TrainStatus.RUNNING,
                             iterations=start, initial_count=initial_count, counters=counters)
        logger.info(f"Training {splats.count} splats on {len(views)} views, iterations {start + 1}..{last} "
                    f"(masks {'on' if config.use_masks else 'off'}, "
                    f"occlusion pruning {'every ' + str(occlusion_interval) if config.occlusion_pruning else 'off'})")

        try:
            for t in range(start + 1, last + 1):
                view = views[scheduler.next()]
                splats, losses = self._iteration(t, view, splats, optimizer, controller, occlusion_interval)
                result.iterations = t

                if t % config.log_interval == 0 or t == last:
                    record = IterationRecord(iteration=t, view=view.index, splats=splats.count, losses=losses)
                    result.history.append(record)
                    if self.metrics_log is not None:
                        self.metrics_log.write(record.as_record())
                    logger.debug(f"iter {t}: loss {losses.total:.6f}, {splats.count} splats")

                if self.output_dir and config.checkpoint_interval and t % config.checkpoint_interval == 0:
                    self.save_checkpoint(splats, optimizer, t, extent, rng, scheduler, controller, initial_count)

            if stop_after is not None and self.output_dir and result.iterations < config.iterations:
                self.save_checkpoint(splats, optimizer, result.iterations, extent, rng, scheduler,
                                     controller, initial_count)
        except Exception as e:
            result.status = TrainStatus.FAILED
            result.end_time = datetime.now()
            result.error = str(e)
            raise

        result.status = TrainStatus.COMPLETED
        result.end_time = datetime.now()
        result.final_count = splats.count
        logger.info(f"Training finished at iteration {result.iterations}: {initial_count} -> {splats.count} splats "
                    f"(cloned {counters.cloned}, split {counters.split}, "
                    f"pruned {counters.pruned_transparent} transparent / {counters.pruned_occluded} occluded)")
        return splats, result

    def _iteration(self, t: int, view: TrainingView, splats: SplatSet, optimizer: AdamOptimizer,
                   controller: DensityController, occlusion_interval: int) -> Tuple[SplatSet, LossBreakdown]:
        config = self.config
        output = render_forward(splats, view.camera, config.background, self.settings,
                                sh_degree=active_sh_degree(config, t))
        losses, pixel_grads = total_loss(view, output, config, t)
        if not losses.is_finite():
            path = self.write_diagnostics(splats, t, view, losses)
            raise NumericalException(f"Non-finite loss at iteration {t} (view {view.index})", snapshot_path=path)
        grads = render_backward(splats, view.camera, output, pixel_grads)

        in_window = t <= config.densify_until
        if in_window:
            accumulate_stats(splats, output, grads)
        optimizer.step(splats, grads, t)

        if in_window:
            if t > config.densify_from_iter and t % config.densify_interval == 0:
                splats = controller.densify_and_prune(splats, check_size=t > config.opacity_reset_interval)
            if config.occlusion_pruning and t % occlusion_interval == 0:
                splats = controller.prune_occluded(splats)
            if t % config.opacity_reset_interval == 0:
                splats = controller.reset_opacity(splats)
                logger.debug(f"iter {t}: opacity reset")
        return splats, losses

    def save_checkpoint(self, splats: SplatSet, optimizer: AdamOptimizer, iteration: int, extent: float,
                        rng: np.random.Generator, scheduler: ViewScheduler, controller: DensityController,
                        initial_count: int) -> str:
        path = os.path.join(self.output_dir, f"checkpoint_{iteration:06d}.npz")
        checkpoint = Checkpoint(
            splats=splats,
            optimizer=optimizer.state,
            iteration=iteration,
            seed=self.config.seed,
            extent=extent,
            rng_state=rng.bit_generator.state,
            schedule=scheduler.state(),
            counters=controller.counters,
            initial_count=initial_count,
            config=json.loads(json.dumps(self.config.to_dict())),
        )
        return self.checkpoint_storage.save(checkpoint, path)

    def load_checkpoint(self, path: str) -> Checkpoint:
        return self.checkpoint_storage.load(path)

    def write_diagnostics(self, splats: SplatSet, iteration: int, view: TrainingView,
                          losses: LossBreakdown) -> str:
        """Dump the splats and the failing view before aborting"""
        if self.output_dir:
            directory = os.path.join(self.output_dir, "diagnostics")
            os.makedirs(directory, exist_ok=True)
        else:
            directory = tempfile.mkdtemp(prefix="splat-diagnostics-")
        SplatPlyStorage().save(splats, os.path.join(directory, f"splats_{iteration:06d}.ply"))
        with open(os.path.join(directory, f"iteration_{iteration:06d}.json"), 'w') as f:
            json.dump({'iteration': iteration, 'view': view.index, 'name': view.name,
                       'losses': {k: repr(v) for k, v in losses.as_dict().items()}}, f, indent=2)
        logger.error(f"Non-finite loss at iteration {iteration}; diagnostics written to {directory}")
        return directory
