"""Joint acoustic event detection and scene classification by multitask learning."""
from .features import AudioClip, FeatureConfig, FeatureMatrix, frame_signal, log_mel, mel_filterbank
from .model import Architecture, ModelParams, forward, init_params, predict_events, predict_scene
from .nn import BACKEND

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "AudioClip",
    "BACKEND",
    "FeatureConfig",
    "FeatureMatrix",
    "ModelParams",
    "forward",
    "frame_signal",
    "init_params",
    "log_mel",
    "mel_filterbank",
    "predict_events",
    "predict_scene",
]
