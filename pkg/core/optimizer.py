import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from core.config import TrainConfig
from core.exceptions import CheckpointException, ContractException
from models.render_output import SplatGradients
from models.splats import PARAMETER_FIELDS, SplatSet, normalize_quaternions

logger = logging.getLogger(__name__)


def exponential_lr(lr_init: float, lr_final: float, step: int, max_steps: int) -> float:
    """Log-linear interpolation from lr_init to lr_final over max_steps"""
    if step < 0 or (lr_init == 0.0 and lr_final == 0.0):
        return 0.0
    t = np.clip(step / max(max_steps, 1), 0.0, 1.0)
    return float(np.exp(np.log(lr_init) * (1.0 - t) + np.log(lr_final) * t))


@dataclass
class OptimizerState:
    """Adam moments per parameter field plus the shared step counter

    Rows stay aligned with splat indices through every density-control rewrite.
    """
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, splats: SplatSet) -> 'OptimizerState':
        return cls(
            step=0,
            exp_avg={name: np.zeros(getattr(splats, name).shape) for name in PARAMETER_FIELDS},
            exp_avg_sq={name: np.zeros(getattr(splats, name).shape) for name in PARAMETER_FIELDS},
        )

    @property
    def rows(self) -> int:
        if not self.exp_avg:
            return 0
        return int(self.exp_avg['position'].shape[0])

    def select(self, index: np.ndarray) -> 'OptimizerState':
        return OptimizerState(
            step=self.step,
            exp_avg={k: v[index].copy() for k, v in self.exp_avg.items()},
            exp_avg_sq={k: v[index].copy() for k, v in self.exp_avg_sq.items()},
        )

    def extend(self, count: int) -> 'OptimizerState':
        """Append count rows of zero moments"""
        def grow(values: np.ndarray) -> np.ndarray:
            return np.concatenate([values, np.zeros((count,) + values.shape[1:])])
        return OptimizerState(
            step=self.step,
            exp_avg={k: grow(v) for k, v in self.exp_avg.items()},
            exp_avg_sq={k: grow(v) for k, v in self.exp_avg_sq.items()},
        )

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {'optimizer_step': np.array(self.step, dtype=np.int64)}
        for name in PARAMETER_FIELDS:
            arrays[f'exp_avg_{name}'] = self.exp_avg[name]
            arrays[f'exp_avg_sq_{name}'] = self.exp_avg_sq[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'OptimizerState':
        try:
            return cls(
                step=int(arrays['optimizer_step']),
                exp_avg={name: np.array(arrays[f'exp_avg_{name}']) for name in PARAMETER_FIELDS},
                exp_avg_sq={name: np.array(arrays[f'exp_avg_sq_{name}']) for name in PARAMETER_FIELDS},
            )
        except KeyError as e:
            raise CheckpointException(f"checkpoint lacks optimizer array {e}")


class AdamOptimizer:
    """Adaptive-moment updates with per-group learning rates

    Groups: position (exponentially decayed, scaled by the scene extent),
    SH degree-0 and higher-order coefficients, opacity, scale and rotation.
    """

    def __init__(self, config: TrainConfig, extent: float, state: Optional[OptimizerState] = None,
                 betas=(0.9, 0.999), eps: float = 1e-15):
        self.config = config
        self.extent = float(extent)
        self.state = state
        self.betas = betas
        self.eps = eps

    def learning_rates(self, iteration: int) -> Dict[str, float]:
        c = self.config
        return {
            'position': exponential_lr(c.position_lr_init * self.extent, c.position_lr_final * self.extent,
                                       iteration, c.iterations),
            'sh_dc': c.sh_dc_lr,
            'sh_rest': c.sh_rest_lr,
            'opacity_logit': c.opacity_lr,
            'log_scale': c.scale_lr,
            'rotation': c.rotation_lr,
        }

    def bind(self, splats: SplatSet):
        """Start from zero moments if no state is attached"""
        if self.state is None:
            self.state = OptimizerState.zeros_like(splats)
        if self.state.rows != splats.count:
            raise ContractException(f"optimizer holds {self.state.rows} rows for {splats.count} splats")

    def _adam_direction(self, name: str, grad: np.ndarray, step: int) -> np.ndarray:
        b1, b2 = self.betas
        m = self.state.exp_avg[name]
        v = self.state.exp_avg_sq[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        return m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, splats: SplatSet, grads: SplatGradients, iteration: int):
        """Apply one update in place; quaternions are renormalized afterwards"""
        self.bind(splats)
        self.state.step += 1
        t = self.state.step
        lrs = self.learning_rates(iteration)
        grad_map = grads.as_dict()

        for name in ('position', 'opacity_logit', 'log_scale', 'rotation'):
            direction = self._adam_direction(name, np.asarray(grad_map[name], dtype=np.float64), t)
            values = getattr(splats, name)
            values -= (lrs[name] * direction).astype(values.dtype)

        sh_lr = np.empty(splats.sh_coeffs.shape[1])
        sh_lr[0] = lrs['sh_dc']
        sh_lr[1:] = lrs['sh_rest']
        direction = self._adam_direction('sh_coeffs', np.asarray(grad_map['sh_coeffs'], dtype=np.float64), t)
        splats.sh_coeffs -= (sh_lr[None, :, None] * direction).astype(splats.sh_coeffs.dtype)

        splats.rotation[:] = normalize_quaternions(splats.rotation.astype(np.float64)).astype(splats.rotation.dtype)

    def select(self, index: np.ndarray):
        self.state = self.state.select(index)

    def extend(self, count: int):
        self.state = self.state.extend(count)

    def reset_moments(self, name: str):
        """Zero the moments of one parameter field (after a value rewrite)"""
        self.state.exp_avg[name][:] = 0.0
        self.state.exp_avg_sq[name][:] = 0.0
