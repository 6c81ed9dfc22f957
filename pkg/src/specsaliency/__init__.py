"""Perturbation-based saliency maps for autoregressive speech-to-text models."""

__version__ = "0.1.0"

from .audio import Spectrogram, Waveform, cmvn, log_mel, read_wav
from .engine import SaliencyBundle, explain_utterance, kl_divergence
from .masks import PerturbationConfig
from .oracle import ModelOracle, RemoteOracle, TokenSequence, ToyOracle
from .segmentation import SegmentationConfig, multiscale_segment, patch_count, slic

__all__ = [
    "Spectrogram",
    "Waveform",
    "read_wav",
    "log_mel",
    "cmvn",
    "SegmentationConfig",
    "patch_count",
    "slic",
    "multiscale_segment",
    "PerturbationConfig",
    "ModelOracle",
    "ToyOracle",
    "RemoteOracle",
    "TokenSequence",
    "SaliencyBundle",
    "explain_utterance",
    "kl_divergence",
]
