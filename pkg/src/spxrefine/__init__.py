"""Superpixel refinement of coarse object-proposal masks."""

from .classifier import TrainConfig, TrainedModel, train
from .groundtruth import SynthConfig, greedy_optimal_set, synth_generate
from .metrics import average_recall, evaluate
from .refine import PostConfig, refine_image
from .sampling import CoarseProposal
from .segmentation import ScaleConfig, SuperpixelSegmentation, segment_to_target_count

__version__ = "0.1.0"

__all__ = [
    "CoarseProposal",
    "PostConfig",
    "ScaleConfig",
    "SuperpixelSegmentation",
    "SynthConfig",
    "TrainConfig",
    "TrainedModel",
    "average_recall",
    "evaluate",
    "greedy_optimal_set",
    "refine_image",
    "segment_to_target_count",
    "synth_generate",
    "train",
]
