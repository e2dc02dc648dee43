"""Convolutional-backbone feature dumps in the retrieval engine's SFV1 format."""

from .backbone import BACKBONES, LAYERS, FeatureBackbone, load_backbone
from .corpus import CorpusManifest, scan_corpus
from .extract import extract
from .sfv import write_sfv

__version__ = "0.1.0"

__all__ = ["BACKBONES", "LAYERS", "FeatureBackbone", "load_backbone",
           "CorpusManifest", "scan_corpus", "extract", "write_sfv", "__version__"]
