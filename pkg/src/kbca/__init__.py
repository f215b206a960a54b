"""Knowledge-aware Bayesian co-attention for speech + text emotion recognition."""

from .config import ModelConfig, load_config
from .model import EmotionModel, fuse_scores, metrics
from .numerics import NumericalError, Rng, Tensor

__version__ = "0.1.0"

__all__ = ["EmotionModel", "ModelConfig", "NumericalError", "Rng", "Tensor", "fuse_scores", "load_config", "metrics"]
