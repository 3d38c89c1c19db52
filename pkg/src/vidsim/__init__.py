"""Fine-grained spatio-temporal video similarity from regional frame features.

The library turns per-frame convolutional activation maps into regional
descriptors, compares videos through a chamfer-reduced region similarity
kernel, refines the frame-to-frame similarity matrix with a small trainable
CNN, and ships the triplet-training and retrieval-evaluation harness around
that core.
"""

from . import autograd, evaluation, features, model, similarity, storage, synthetic, training
from .errors import VidsimError

__version__ = "0.1.0"

__all__ = [
    "autograd",
    "features",
    "similarity",
    "model",
    "training",
    "evaluation",
    "storage",
    "synthetic",
    "VidsimError",
    "__version__",
]
