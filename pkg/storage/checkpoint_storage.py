import json
import os
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Any, Dict

import numpy as np

from core.exceptions import CheckpointException
from core.optimizer import OptimizerState
from models.results import DensityCounters
from models.splats import PARAMETER_FIELDS, STAT_FIELDS, SplatSet
from storage.base import AtomicFileMixin, BaseStorage

CHECKPOINT_FORMAT = "splatcore-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-exactly"""
    splats: SplatSet
    optimizer: OptimizerState
    iteration: int
    seed: int
    extent: float
    rng_state: Dict[str, Any]
    schedule: Dict[str, Any] = field(default_factory=dict)
    counters: DensityCounters = field(default_factory=DensityCounters)
    initial_count: int = 0
    config: Dict[str, Any] = field(default_factory=dict)


class CheckpointStorage(BaseStorage, AtomicFileMixin):
    """Versioned .npz container for splats, optimizer moments and loop state"""

    extensions = ('.npz',)

    def get_name(self) -> str:
        return "checkpoint"

    def save(self, checkpoint: Checkpoint, path: str) -> str:
        arrays = {f'splat_{name}': getattr(checkpoint.splats, name) for name in PARAMETER_FIELDS + STAT_FIELDS}
        arrays.update(checkpoint.optimizer.to_arrays())
        meta = {
            'format': CHECKPOINT_FORMAT,
            'version': CHECKPOINT_VERSION,
            'iteration': checkpoint.iteration,
            'seed': checkpoint.seed,
            'extent': checkpoint.extent,
            'rng_state': checkpoint.rng_state,
            'schedule': checkpoint.schedule,
            'counters': asdict(checkpoint.counters),
            'initial_count': checkpoint.initial_count,
            'config': checkpoint.config,
        }
        # float.hex keeps the extent exact through JSON
        meta['extent'] = float(checkpoint.extent).hex()
        arrays['meta'] = np.array(json.dumps(meta))
        with self._atomic_path(path) as tmp:
            with open(tmp, 'wb') as f:
                np.savez(f, **arrays)
        self.logger.info(f"Saved checkpoint at iteration {checkpoint.iteration} to {path}")
        return path

    def load(self, path: str) -> Checkpoint:
        if not os.path.exists(path):
            raise CheckpointException(f"Checkpoint not found: {path}")
        try:
            with np.load(path, allow_pickle=False) as data:
                arrays = {key: np.array(data[key]) for key in data.files}
        except (zipfile.BadZipFile, ValueError, OSError, EOFError, KeyError) as e:
            raise CheckpointException(f"{path}: unreadable checkpoint ({e})")

        if 'meta' not in arrays:
            raise CheckpointException(f"{path}: no checkpoint metadata")
        meta = json.loads(str(arrays['meta']))
        if meta.get('format') != CHECKPOINT_FORMAT:
            raise CheckpointException(f"{path}: not a checkpoint (format {meta.get('format')!r})")
        if meta.get('version') != CHECKPOINT_VERSION:
            raise CheckpointException(
                f"{path}: checkpoint version {meta.get('version')} is not supported (expected {CHECKPOINT_VERSION})")

        try:
            splats = SplatSet(**{name: arrays[f'splat_{name}'] for name in PARAMETER_FIELDS + STAT_FIELDS})
        except KeyError as e:
            raise CheckpointException(f"{path}: checkpoint lacks splat array {e}")
        optimizer = OptimizerState.from_arrays(arrays)
        if optimizer.rows != splats.count:
            raise CheckpointException(f"{path}: optimizer rows {optimizer.rows} do not match {splats.count} splats")

        self.logger.info(f"Loaded checkpoint at iteration {meta['iteration']} from {path}")
        return Checkpoint(
            splats=splats,
            optimizer=optimizer,
            iteration=int(meta['iteration']),
            seed=int(meta['seed']),
            extent=float.fromhex(meta['extent']),
            rng_state=meta['rng_state'],
            schedule=meta['schedule'],
            counters=DensityCounters(**meta['counters']),
            initial_count=int(meta['initial_count']),
            config=meta['config'],
        )
