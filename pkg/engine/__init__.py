from .exceptions import SplatError
from .scene import Camera, GaussianScene, validate_scene
from .settings import DEFAULT_CONFIG, load_config

# stage modules (bundle, finetune, splat_engine, ...) are imported directly;
# coders/ depends on engine.exceptions, so nothing here may import coders.
__all__ = ['SplatError', 'Camera', 'GaussianScene', 'validate_scene', 'DEFAULT_CONFIG', 'load_config']
