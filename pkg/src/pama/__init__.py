"""Progressive attentional manifold alignment style transfer."""

from .codec import (Codec, CodecProfile, FeatureMap, PROFILES, TAPS,
                    mean_variance_normalize)
from .config import StageSchedule, TrainConfig, load_train_config
from .model import StyleTransferModel, load_model

__all__ = [
    "Codec", "CodecProfile", "FeatureMap", "PROFILES", "TAPS",
    "mean_variance_normalize", "StageSchedule", "TrainConfig",
    "load_train_config", "StyleTransferModel", "load_model",
]
