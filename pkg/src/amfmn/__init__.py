"""Cross-modal text-image matching for remote-sensing scenes.

The package provides a numpy implementation of an asymmetric multimodal
feature matching network: a toy convolutional backbone with multiscale
visual self-attention, a BiGRU text encoder guided by the visual vector,
a gated sentence/keyword fusion, a triplet loss whose margin shrinks with
caption similarity, retrieval metrics, and text-driven localization.
"""

from .model import Model, ModelConfig

__all__ = ["Model", "ModelConfig"]
__version__ = "0.1.0"
