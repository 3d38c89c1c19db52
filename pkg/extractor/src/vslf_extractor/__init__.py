"""Offline adapter: videos in, VSLF activation-map files out."""

from .adapter import ExtractionJob, ExtractionResult, extract
from .backbone import Backbone, PROFILES

__version__ = "0.1.0"

__all__ = ["ExtractionJob", "ExtractionResult", "extract", "Backbone", "PROFILES", "__version__"]
