"""
Adaptive density control: clone, split, transparency pruning, opacity reset
and occlusion-aware pruning, all expressed as index-set rewrites of a SplatSet
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from core.config import TrainConfig
from core.optimizer import AdamOptimizer
from metrics.census import occlusion_census
from models.camera import CameraView, TrainingView
from models.render_output import RenderOutput, SplatGradients
from models.results import CensusReport, DensityCounters
from models.splats import SplatSet, decode_params, inverse_sigmoid, normalize_quaternions, quaternion_to_matrix
from rasterizer.binning import RasterSettings

logger = logging.getLogger(__name__)

SPLIT_CHILDREN = 2
RESET_OPACITY = 0.01


@dataclass
class Rewrite:
    """How a control step maps old rows to new rows: keep old[keep], then append `added` rows"""
    keep: np.ndarray
    added: int = 0
    cloned: int = 0
    split: int = 0

    @property
    def removed(self) -> int:
        return int((~self.keep).sum())


def accumulate_stats(splats: SplatSet, output: RenderOutput, grads: SplatGradients):
    """Add the screen-space positional gradient of contributing splats to their statistics"""
    hit = output.contributed
    splats.grad_accum[hit] += grads.screen[hit]
    splats.grad_count[hit] += 1
    splats.max_radius[hit] = np.maximum(splats.max_radius[hit], output.max_radius[hit])
    splats.seen_since_prune |= hit


def mean_gradients(splats: SplatSet) -> np.ndarray:
    grads = np.zeros(splats.count)
    np.divide(splats.grad_accum, splats.grad_count, out=grads, where=splats.grad_count > 0)
    return grads


def densify(splats: SplatSet, config: TrainConfig, extent: float,
            rng: np.random.Generator) -> Tuple[SplatSet, Rewrite]:
    """Clone small and split large splats whose mean gradient exceeds the threshold

    Clones are exact copies. Each split parent is replaced by two children at
    scale / 1.6, positioned by sampling the parent's disc. Children inherit
    seen_since_prune; all gradient statistics are reset afterwards.
    """
    grads = mean_gradients(splats)
    selected = grads > config.densify_grad_threshold
    largest = np.exp(splats.log_scale.astype(np.float64)).max(axis=1)
    small = largest < config.percent_dense * extent
    clone_mask = selected & small
    split_mask = selected & ~small

    clones = splats.select(clone_mask)
    children = _split_children(splats.select(split_mask), rng)
    keep = ~split_mask
    result = splats.select(keep).concatenate(clones).concatenate(children)
    result.reset_stats()

    rewrite = Rewrite(keep=keep, added=clones.count + children.count,
                      cloned=clones.count, split=int(split_mask.sum()))
    if rewrite.added:
        logger.debug(f"densify: cloned {rewrite.cloned}, split {rewrite.split} -> {result.count} splats")
    return result, rewrite


def _split_children(parents: SplatSet, rng: np.random.Generator) -> SplatSet:
    n = SPLIT_CHILDREN
    if parents.count == 0:
        return SplatSet.empty(parents.sh_degree, parents.dtype)
    scale = np.exp(parents.log_scale.astype(np.float64))
    stds = np.tile(np.concatenate([scale, np.zeros((parents.count, 1))], axis=1), (n, 1))
    samples = rng.normal(size=stds.shape) * stds
    frames = np.tile(quaternion_to_matrix(normalize_quaternions(parents.rotation.astype(np.float64))), (n, 1, 1))
    offsets = np.einsum('mij,mj->mi', frames, samples)

    children = SplatSet(**{
        name: np.concatenate([getattr(parents, name)] * n)
        for name in ('position', 'rotation', 'log_scale', 'opacity_logit', 'sh_coeffs',
                     'grad_accum', 'grad_count', 'seen_since_prune', 'max_radius')
    })
    dtype = parents.dtype
    children.position = (children.position.astype(np.float64) + offsets).astype(dtype)
    children.log_scale = np.log(np.tile(scale, (n, 1)) / (0.8 * n)).astype(dtype)
    return children


def prune_transparent(splats: SplatSet, config: TrainConfig, extent: Optional[float] = None,
                      max_screen_size: Optional[float] = None) -> Tuple[SplatSet, Rewrite]:
    """Remove splats below the opacity threshold, and oversized ones when size bounds are given"""
    if splats.count == 0:
        return splats.copy(), Rewrite(keep=np.zeros(0, dtype=bool))
    decoded = decode_params(splats)
    remove = decoded.opacity < config.opacity_prune_threshold
    if max_screen_size is not None:
        remove |= splats.max_radius > max_screen_size
    if extent is not None and max_screen_size is not None:
        remove |= decoded.scale.max(axis=1) > config.max_world_scale_ratio * extent
    keep = ~remove
    return splats.select(keep), Rewrite(keep=keep)


def prune_occluded(splats: SplatSet) -> Tuple[SplatSet, Rewrite]:
    """Remove splats that contributed to no pixel since the previous prune; survivors' flags are cleared"""
    keep = splats.seen_since_prune.copy()
    result = splats.select(keep)
    result.seen_since_prune[:] = False
    return result, Rewrite(keep=keep)


def reset_opacity(splats: SplatSet) -> SplatSet:
    """Clamp every opacity to at most 0.01 and clear the visibility flags"""
    result = splats.copy()
    ceiling = inverse_sigmoid(RESET_OPACITY)
    result.opacity_logit = np.minimum(result.opacity_logit, np.asarray(ceiling, dtype=result.dtype))
    result.seen_since_prune[:] = False
    return result


def post_train_occlusion_prune(splats: SplatSet, views: Sequence[Union[TrainingView, CameraView]],
                               background: Sequence[float] = (0.0, 0.0, 0.0),
                               settings: Optional[RasterSettings] = None) -> Tuple[SplatSet, CensusReport]:
    """Render every view once and drop the splats that never contributed"""
    report = occlusion_census(splats, views, background, settings)
    keep = np.ones(splats.count, dtype=bool)
    keep[report.never_contributed] = False
    result = splats.select(keep)
    report.removed = int((~keep).sum())
    logger.info(f"Post-training prune removed {report.removed}/{report.total} splats ({report.ratio:.1%})")
    return result, report


class DensityController:
    """Applies control steps to a splat set while keeping optimizer rows and counters in sync"""

    def __init__(self, config: TrainConfig, extent: float, rng: np.random.Generator,
                 optimizer: Optional[AdamOptimizer] = None, counters: Optional[DensityCounters] = None):
        self.config = config
        self.extent = extent
        self.rng = rng
        self.optimizer = optimizer
        self.counters = counters or DensityCounters()

    def _sync(self, rewrite: Rewrite):
        if self.optimizer is not None and self.optimizer.state is not None:
            self.optimizer.select(rewrite.keep)
            if rewrite.added:
                self.optimizer.extend(rewrite.added)

    def densify_and_prune(self, splats: SplatSet, check_size: bool) -> SplatSet:
        before = splats.count
        splats, rewrite = densify(splats, self.config, self.extent, self.rng)
        self._sync(rewrite)
        self.counters.cloned += rewrite.cloned
        self.counters.split += rewrite.split

        max_screen = self.config.max_screen_size if check_size else None
        splats, rewrite = prune_transparent(splats, self.config, self.extent, max_screen)
        self._sync(rewrite)
        self.counters.pruned_transparent += rewrite.removed
        logger.debug(f"density control: {before} -> {splats.count} splats")
        return splats

    def prune_occluded(self, splats: SplatSet) -> SplatSet:
        splats, rewrite = prune_occluded(splats)
        self._sync(rewrite)
        self.counters.pruned_occluded += rewrite.removed
        if rewrite.removed:
            logger.debug(f"occlusion prune removed {rewrite.removed} splats")
        return splats

    def reset_opacity(self, splats: SplatSet) -> SplatSet:
        splats = reset_opacity(splats)
        if self.optimizer is not None and self.optimizer.state is not None:
            self.optimizer.reset_moments('opacity_logit')
        self.counters.opacity_resets += 1
        return splats
