"""
tubelink - online action tube generation, temporal labelling and evaluation.

Builds per-class action tubes frame by frame from detection boxes, trims them
with an incrementally maintained Viterbi labelling, predicts the video label
early, and evaluates the result against ground-truth tubes.
"""

from tubelink.config import Config, load_config
from tubelink.core import BoundingBox, ClassScores, Detection, FrameDetections, spatial_iou
from tubelink.errors import DomainError, RecordError, SequencingError, TubeLinkError

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ClassScores",
    "Config",
    "Detection",
    "DomainError",
    "FrameDetections",
    "RecordError",
    "SequencingError",
    "TubeLinkError",
    "load_config",
    "spatial_iou",
]
