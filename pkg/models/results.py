from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional

import numpy as np


class TrainStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class LossBreakdown:
    """Scalar loss terms of one iteration"""
    total: float
    photometric: float
    background: float
    depth_distortion: float
    normal_consistency: float
    # coefficients in effect (zero during a regularizer's warmup)
    alpha_coeff: float = 0.0
    beta_coeff: float = 0.0
    gamma_coeff: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return {
            'total': self.total,
            'photometric': self.photometric,
            'background': self.background,
            'depth_distortion': self.depth_distortion,
            'normal_consistency': self.normal_consistency,
        }

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_dict().values())


@dataclass
class DensityCounters:
    """Population bookkeeping across density-control events"""
    cloned: int = 0
    split: int = 0
    pruned_transparent: int = 0
    pruned_occluded: int = 0
    opacity_resets: int = 0

    @property
    def pruned(self) -> int:
        return self.pruned_transparent + self.pruned_occluded

    def expected_count(self, initial: int) -> int:
        return initial + self.cloned + self.split - self.pruned


@dataclass
class CensusReport:
    """Visibility census over a set of views"""
    total: int
    occluded: int
    occluded_in_frustum: int
    out_of_frustum: int
    occluded_indices: np.ndarray = field(repr=False)
    out_of_frustum_indices: np.ndarray = field(repr=False)
    removed: int = 0

    @property
    def ratio(self) -> float:
        return self.occluded / self.total if self.total else 0.0

    @property
    def never_contributed(self) -> np.ndarray:
        return np.union1d(self.occluded_indices, self.out_of_frustum_indices)

    def as_record(self) -> Dict:
        return {
            'total': self.total,
            'occluded': self.occluded,
            'ratio': self.ratio,
            'occluded_in_frustum': self.occluded_in_frustum,
            'out_of_frustum': self.out_of_frustum,
            'removed': self.removed,
        }


@dataclass
class IterationRecord:
    """One line of the training metrics log"""
    iteration: int
    view: int
    splats: int
    losses: LossBreakdown

    def as_record(self) -> Dict:
        record = {'iteration': self.iteration}
        record.update(self.losses.as_dict())
        record['splats'] = self.splats
        record['view'] = self.view
        return record


@dataclass
class TrainResult:
    """Outcome of a training run"""
    start_time: datetime
    end_time: Optional[datetime] = None
    status: TrainStatus = TrainStatus.PENDING
    iterations: int = 0
    initial_count: int = 0
    final_count: int = 0
    counters: DensityCounters = field(default_factory=DensityCounters)
    history: List[IterationRecord] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def final_losses(self) -> Optional[LossBreakdown]:
        return self.history[-1].losses if self.history else None

    def as_record(self) -> Dict:
        return {
            'status': self.status.value,
            'iterations': self.iterations,
            'initial_count': self.initial_count,
            'final_count': self.final_count,
            'cloned': self.counters.cloned,
            'split': self.counters.split,
            'pruned_transparent': self.counters.pruned_transparent,
            'pruned_occluded': self.counters.pruned_occluded,
            'start_time': self.start_time.isoformat(),
            'end_time': self.end_time.isoformat() if self.end_time else None,
            'error': self.error,
        }
