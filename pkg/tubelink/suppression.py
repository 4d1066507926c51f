"""Per-class non-maximum suppression and top-n selection."""

from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tubelink.config import Config
from tubelink.core import BoundingBox, Detection, boxes_to_array, check_class_count, pairwise_iou
from tubelink.errors import DomainError


class ClassDetection(BaseModel):
    """A detection projected onto one class: (box, class id, s_c(b))."""

    model_config = ConfigDict(frozen=True)

    box: BoundingBox
    class_id: int = Field(ge=0)
    score: float = Field(ge=0.0, le=1.0)


def _greedy_keep(
    scores: np.ndarray, ious: np.ndarray, nms_iou: float, n: int, min_score: float
) -> List[int]:
    order = np.argsort(-scores, kind="stable")
    kept: List[int] = []
    for idx in order:
        if scores[idx] < min_score:
            break
        if all(ious[idx, j] <= nms_iou for j in kept):
            kept.append(int(idx))
            if len(kept) == n:
                break
    return kept


def nms_top_n(
    frame: Sequence[Detection],
    class_id: int,
    nms_iou: float,
    n: int,
    min_score: float = 0.0,
    ious: Optional[np.ndarray] = None,
) -> List[ClassDetection]:
    """Greedy per-class NMS keeping at most ``n`` boxes, best score first.

    A box survives iff its IoU with every already kept box is <= nms_iou.
    Equal scores keep their input order. ``ious`` may carry a precomputed
    pairwise IoU matrix of ``frame`` shared across classes.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not (0.0 <= nms_iou <= 1.0):
        raise DomainError(f"nms_iou must lie in [0, 1], got {nms_iou}")
    if class_id < 0 or any(class_id >= det.class_count for det in frame):
        raise DomainError(f"class id {class_id} out of range")
    if not frame:
        return []

    scores = np.array([det.scores[class_id] for det in frame], dtype=np.float64)
    if ious is None:
        boxes = boxes_to_array([det.box for det in frame])
        ious = pairwise_iou(boxes, boxes)
    kept = _greedy_keep(scores, ious, nms_iou, n, min_score)
    return [
        ClassDetection(box=frame[i].box, class_id=class_id, score=float(scores[i])) for i in kept
    ]


def suppress_frame(frame: Sequence[Detection], config: Config) -> Dict[int, List[ClassDetection]]:
    """Candidate lists for every class 0..C-1 of the configuration."""
    check_class_count(frame, config.class_count)
    boxes = boxes_to_array([det.box for det in frame])
    ious = pairwise_iou(boxes, boxes)
    return {
        c: nms_top_n(frame, c, config.nms_iou, config.n, config.min_score, ious=ious)
        for c in range(config.class_count)
    }
