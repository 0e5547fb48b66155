from typing import Callable, Dict, List

from core.exceptions import ConfigurationException
from synth.scenes import SynthScene, make_erroneous_mask_scene, make_occluder_scene, make_sphere_scene


class SceneFactory:
    """Factory for synthetic scene generators"""

    _scene_types: Dict[str, Callable[..., SynthScene]] = {
        'sphere': make_sphere_scene,
        'occluder': make_occluder_scene,
        'badmask': make_erroneous_mask_scene,
    }

    @classmethod
    def create(cls, scene_type: str, seed: int = 0, **kwargs) -> SynthScene:
        """Generate a scene by name; keyword arguments go to the generator"""
        if scene_type not in cls._scene_types:
            raise ConfigurationException(
                f"Unknown scene type: {scene_type}. Available: {', '.join(cls.get_available_types())}")
        return cls._scene_types[scene_type](seed=seed, **kwargs)

    @classmethod
    def register_scene(cls, name: str, generator: Callable[..., SynthScene]):
        cls._scene_types[name] = generator

    @classmethod
    def get_available_types(cls) -> List[str]:
        return list(cls._scene_types.keys())
