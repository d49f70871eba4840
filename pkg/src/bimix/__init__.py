"""Day/night adaptive semantic segmentation with bidirectional mixing."""
from .config import DESK, Config, load_config
from .estimator import BiMixSegmenter

__all__ = ["BiMixSegmenter", "Config", "DESK", "load_config"]
__version__ = "0.1.0"
