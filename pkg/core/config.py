import os
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple, get_type_hints

from dotenv import load_dotenv

from core.exceptions import ConfigurationException

PRESETS = {
    "baseline": {"use_masks": False, "occlusion_pruning": False},
    "pruning": {"use_masks": False, "occlusion_pruning": True},
    "masking": {"use_masks": True, "occlusion_pruning": False},
    "full": {"use_masks": True, "occlusion_pruning": True},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class Config:
    """Runtime configuration (logging, workers, resource budgets)"""

    log_level: str = "INFO"
    log_file: Optional[str] = None

    threads: Optional[int] = None

    # voxels; float64 tsdf + weight and float32 colour is 28 bytes per voxel
    voxel_budget: int = 2 ** 25

    metrics_log: Optional[str] = None

    @classmethod
    def from_env(cls) -> 'Config':
        """Create config from environment variables (and a .env file if present)"""
        load_dotenv()
        threads = os.getenv('SPLAT_THREADS')
        return cls(
            log_level=os.getenv('SPLAT_LOG_LEVEL', 'INFO'),
            log_file=os.getenv('SPLAT_LOG_FILE'),
            threads=int(threads) if threads else None,
            voxel_budget=int(os.getenv('SPLAT_VOXEL_BUDGET', str(2 ** 25))),
            metrics_log=os.getenv('SPLAT_METRICS_LOG'),
        )


@dataclass
class TrainConfig:
    """Optimization schedule, loss coefficients and thresholds"""

    iterations: int = 30000
    seed: int = 0
    deterministic: bool = False
    precision: str = "float32"
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    # total loss = photometric + alpha * L_d + beta * L_n + gamma * L_b
    alpha_coeff: float = 1000.0
    beta_coeff: float = 0.05
    gamma_coeff: float = 0.5
    lambda_dssim: float = 0.2
    depth_distortion_from_iter: int = 3000
    normal_consistency_from_iter: int = 7000

    use_masks: bool = True
    occlusion_pruning: bool = True
    occlusion_prune_interval: Optional[int] = None

    densify_interval: int = 100
    densify_from_iter: int = 500
    densify_until_iter: Optional[int] = None
    densify_grad_threshold: float = 0.0002
    percent_dense: float = 0.01
    opacity_reset_interval: int = 3000
    opacity_prune_threshold: float = 0.005
    max_screen_size: float = 20.0
    max_world_scale_ratio: float = 0.1

    sh_degree_max: int = 3
    sh_upgrade_interval: int = 1000

    position_lr_init: float = 0.00016
    position_lr_final: float = 0.0000016
    sh_dc_lr: float = 0.0025
    sh_rest_lr: float = 0.000125
    opacity_lr: float = 0.05
    scale_lr: float = 0.005
    rotation_lr: float = 0.001

    alpha_termination_threshold: float = 0.9999
    min_splat_alpha: float = 1.0 / 255.0

    log_interval: int = 10
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.background = tuple(float(c) for c in self.background)
        self._validate()

    def _validate(self):
        """Reject configurations that violate the schedule invariants"""
        if self.iterations < 0:
            raise ConfigurationException("iterations must be >= 0")
        intervals = {
            'densify_interval': self.densify_interval,
            'opacity_reset_interval': self.opacity_reset_interval,
            'sh_upgrade_interval': self.sh_upgrade_interval,
            'log_interval': self.log_interval,
        }
        if self.occlusion_prune_interval is not None:
            intervals['occlusion_prune_interval'] = self.occlusion_prune_interval
        for name, value in intervals.items():
            if value < 1:
                raise ConfigurationException(f"{name} must be >= 1, got {value}")
        if self.checkpoint_interval < 0:
            raise ConfigurationException("checkpoint_interval must be >= 0")
        for name in ('alpha_coeff', 'beta_coeff', 'gamma_coeff'):
            if getattr(self, name) < 0:
                raise ConfigurationException(f"{name} must be >= 0")
        for name in ('densify_grad_threshold', 'opacity_prune_threshold',
                     'alpha_termination_threshold', 'min_splat_alpha',
                     'lambda_dssim', 'percent_dense'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationException(f"{name} must lie in (0, 1), got {value}")
        if not 0 <= self.sh_degree_max <= 3:
            raise ConfigurationException("sh_degree_max must be between 0 and 3")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationException(f"Unknown precision: {self.precision}")
        if len(self.background) != 3:
            raise ConfigurationException("background must have three channels")

    @property
    def densify_until(self) -> int:
        """Last iteration of density control (first half of training by default)"""
        if self.densify_until_iter is not None:
            return self.densify_until_iter
        return self.iterations // 2

    def occlusion_interval_for(self, n_views: int) -> int:
        """Occlusion-prune interval, chosen from the view count when unset"""
        if self.occlusion_prune_interval is not None:
            return self.occlusion_prune_interval
        return self.default_occlusion_interval(n_views)

    @staticmethod
    def default_occlusion_interval(n_views: int) -> int:
        return 100 if n_views <= 64 else 600

    def with_overrides(self, **overrides: Any) -> 'TrainConfig':
        """Return a copy with every non-None override applied"""
        given = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(given) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigurationException(f"Unknown config keys: {sorted(unknown)}")
        return replace(self, **given)

    def with_preset(self, name: str) -> 'TrainConfig':
        """Apply one of the ablation presets (baseline, pruning, masking, full)"""
        if name not in PRESETS:
            raise ConfigurationException(f"Unknown preset: {name}")
        return replace(self, **PRESETS[name])

    @classmethod
    def from_file(cls, path: str) -> 'TrainConfig':
        """Create config from a flat 'key = value' text file"""
        if not os.path.exists(path):
            raise ConfigurationException(f"Config file not found: {path}")
        values: Dict[str, str] = {}
        with open(path, 'r') as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.split('#', 1)[0].strip()
                if not line:
                    continue
                if '=' not in line:
                    raise ConfigurationException(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split('=', 1))
                values[key] = value
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'TrainConfig':
        """Create config from a mapping of field names to raw (string) values"""
        hints = get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigurationException(f"Unknown config key: {key}")
            kwargs[key] = _coerce(key, value, hints[key])
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_file(self, path: str) -> str:
        """Write the flat 'key = value' form read by from_file"""
        with open(path, 'w') as f:
            for key, value in self.to_dict().items():
                if value is None:
                    text = "none"
                elif isinstance(value, tuple):
                    text = ",".join(repr(float(c)) for c in value)
                elif isinstance(value, float):
                    text = repr(value)
                else:
                    text = str(value).lower() if isinstance(value, bool) else str(value)
                f.write(f"{key} = {text}\n")
        return path


def _coerce(key: str, value: Any, hint: Any) -> Any:
    """Coerce a raw config value to the annotated field type"""
    if not isinstance(value, str):
        return value
    text = value.strip()
    optional = hint in (Optional[int], Optional[float], Optional[str])
    if optional and text.lower() in ("none", ""):
        return None
    if optional:
        hint = hint.__args__[0]
    try:
        if hint is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint == Tuple[float, float, float]:
            return tuple(float(c) for c in text.split(','))
        return text
    except ValueError:
        raise ConfigurationException(f"Invalid value for {key}: {value!r}")
