"""Interactive layout editing of style-based generator images.

A transformer encoder-decoder maps variable-length user annotations (motion
vectors and anchor points) plus an initial W+ latent sequence to edited
latents, trained self-supervised on synthetic image pairs and flow-derived
pseudo inputs, served over a websocket editing protocol, and benchmarked
against closed-form latent-direction baselines.
"""

from .errors import (
    CalibrationError,
    CheckpointError,
    ConfigError,
    InputError,
    LatentDragError,
    TrainingError,
)
from .generator import FeatureGrid, Generator, GeneratorConfig
from .interaction import DragGesture, EditSession, InteractionConfig
from .training import TrainConfig, TrainState
from .transformer import LatentTransformer, TransformerConfig, UserInputSet

__all__ = [
    "CalibrationError",
    "CheckpointError",
    "ConfigError",
    "InputError",
    "LatentDragError",
    "TrainingError",
    "FeatureGrid",
    "Generator",
    "GeneratorConfig",
    "DragGesture",
    "EditSession",
    "InteractionConfig",
    "LatentTransformer",
    "TrainConfig",
    "TrainState",
    "TransformerConfig",
    "UserInputSet",
]
