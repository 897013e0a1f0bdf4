from .providers import EmbeddingProviderHandle, HashEmbeddingProvider, OneHotEmbeddingProvider
from .toy import (
    ToyEncoderDecoder,
    ToyTokenizer,
    ToyVocab,
    WeightPredictor,
    fuse_image_token,
    load_checkpoint,
    save_checkpoint,
)
from .train import Checkpoint, train_controller, train_weight_predictor

__all__ = [
    "EmbeddingProviderHandle",
    "HashEmbeddingProvider",
    "OneHotEmbeddingProvider",
    "ToyEncoderDecoder",
    "ToyTokenizer",
    "ToyVocab",
    "WeightPredictor",
    "fuse_image_token",
    "load_checkpoint",
    "save_checkpoint",
    "Checkpoint",
    "train_controller",
    "train_weight_predictor",
]
