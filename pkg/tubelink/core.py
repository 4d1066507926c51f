"""
Geometry and shared domain types.

Boxes are corner encoded (x1, y1, x2, y2) in continuous pixel coordinates.
All types here are frozen pydantic models and safe to share across threads.
"""

import math
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from tubelink.errors import DomainError


class BoundingBox(BaseModel):
    model_config = ConfigDict(frozen=True)

    x1: float
    y1: float
    x2: float
    y2: float

    @model_validator(mode="after")
    def _check_geometry(self) -> "BoundingBox":
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"box must have positive width and height, got {coords}")
        return self

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> "BoundingBox":
        if len(coords) != 4:
            raise DomainError(f"a box needs 4 coordinates, got {len(coords)}")
        x1, y1, x2, y2 = (float(v) for v in coords)
        return cls(x1=x1, y1=y1, x2=x2, y2=y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]


class ClassScores(BaseModel):
    """Per-class confidence vector s_c(b), one entry per action class."""

    model_config = ConfigDict(frozen=True)

    scores: Tuple[float, ...] = Field(min_length=1)

    @field_validator("scores")
    @classmethod
    def _check_range(cls, scores: Tuple[float, ...]) -> Tuple[float, ...]:
        for value in scores:
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"class scores must lie in [0, 1], got {value}")
        return scores

    def __len__(self) -> int:
        return len(self.scores)

    def __getitem__(self, class_id: int) -> float:
        return self.scores[class_id]

    @property
    def top(self) -> float:
        return max(self.scores)


class Detection(BaseModel):
    model_config = ConfigDict(frozen=True)

    box: BoundingBox
    scores: ClassScores

    @classmethod
    def of(cls, coords: Sequence[float], scores: Sequence[float]) -> "Detection":
        return cls(box=BoundingBox.from_list(coords), scores=ClassScores(scores=tuple(scores)))

    @property
    def class_count(self) -> int:
        return len(self.scores)


class FrameDetections(BaseModel):
    """All detections of one frame of one video stream."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    frame_index: int = Field(ge=0)
    detections: Tuple[Detection, ...] = ()


class TubeBox(BaseModel):
    """A box appended to a tube, with the class score it was matched with."""

    model_config = ConfigDict(frozen=True)

    frame_index: int = Field(ge=0)
    box: BoundingBox
    score: float = Field(ge=0.0, le=1.0)


def check_class_count(detections: Sequence[Detection], class_count: int) -> None:
    """Raise DomainError unless every detection carries ``class_count`` scores."""
    for det in detections:
        if det.class_count != class_count:
            raise DomainError(
                f"detection has {det.class_count} class scores, expected {class_count}"
            )


def spatial_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    if not (area_a > 0 and area_b > 0):
        raise DomainError("spatial_iou is undefined for zero-area boxes")
    if a == b:
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(1.0, inter / (area_a + area_b - inter))


def boxes_to_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float array."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)


def pairwise_iou(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """IoU matrix of shape (len(a), len(b)) for corner-encoded box arrays."""
    if boxes_a.shape[0] == 0 or boxes_b.shape[0] == 0:
        return np.zeros((boxes_a.shape[0], boxes_b.shape[0]), dtype=np.float64)
    a = boxes_a[:, None, :]
    b = boxes_b[None, :, :]
    iw = np.maximum(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0.0)
    ih = np.maximum(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0.0)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    if np.any(union <= 0):
        raise DomainError("pairwise_iou is undefined for zero-area boxes")
    return np.clip(inter / union, 0.0, 1.0)
