"""Patch slimming for vision transformers with a one-shot life predictor."""

from .errors import VitSlimError
from .inference import SlimEngine, infer
from .schedule import SlimSchedule
from .vit import ModelWeights, ViTConfig, init_weights, preset

__all__ = ["ModelWeights", "SlimEngine", "SlimSchedule", "ViTConfig", "VitSlimError", "infer", "init_weights",
           "preset"]
__version__ = "0.1.0"
