"""HTTP bridge serving an encoder-decoder speech-to-text model."""

__version__ = "0.1.0"

from .model import BridgeModel, ModelConfig, load_model, save_checkpoint
from .server import BridgeConfig, create_app

__all__ = [
    "BridgeModel",
    "ModelConfig",
    "load_model",
    "save_checkpoint",
    "BridgeConfig",
    "create_app",
]
