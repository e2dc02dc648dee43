"""Structure-aware cross-modal feature disentanglement and fused retrieval.

Trains encoder/decoder/variational components on pre-extracted embeddings
and ranks an image gallery for sketch queries in three fused spaces.
"""

from .data import (FeatureSet, SplitSpec, SyntheticSpec, TrainPool, apply_split,
                   generate_synthetic, read_features, read_split, write_features,
                   write_split)
from .losses import LossBreakdown, LossToggles, LossWeights
from .metrics import EvalReport, evaluate
from .model import DisentangleModel, ModelDims
from .retrieval import FusionWeights, RankedList, rank_all, rank_gallery
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "FeatureSet", "SplitSpec", "SyntheticSpec", "TrainPool", "apply_split",
    "generate_synthetic", "read_features", "read_split", "write_features",
    "write_split", "LossBreakdown", "LossToggles", "LossWeights", "EvalReport",
    "evaluate", "DisentangleModel", "ModelDims", "FusionWeights", "RankedList",
    "rank_all", "rank_gallery", "Checkpoint", "TrainConfig", "load_checkpoint",
    "save_checkpoint", "train", "__version__",
]
