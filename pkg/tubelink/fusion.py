"""
Fusion of appearance-stream and flow-stream detections of one frame.

Two strategies are supported: the union set, which simply keeps both sets of
boxes, and boost fusion, where a spatially matching flow box amplifies the
scores of an appearance box before L1 normalisation.
"""

from typing import List, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tubelink.core import ClassScores, Detection, boxes_to_array, pairwise_iou
from tubelink.errors import DomainError


class FusionStrategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Literal["union_set", "boost"] = "union_set"
    boost_iou_threshold: float = Field(0.3, ge=0.0, le=1.0)


def _shared_class_count(appearance: Sequence[Detection], flow: Sequence[Detection]) -> None:
    counts = {det.class_count for det in appearance} | {det.class_count for det in flow}
    if len(counts) > 1:
        raise DomainError(f"appearance and flow detections disagree on class count: {sorted(counts)}")


def _l1_normalise(scores: np.ndarray) -> ClassScores:
    total = float(scores.sum())
    if total > 0:
        scores = scores / total
    return ClassScores(scores=tuple(float(v) for v in np.clip(scores, 0.0, 1.0)))


def union_fuse(appearance: Sequence[Detection], flow: Sequence[Detection]) -> List[Detection]:
    """Concatenate both sets, appearance first, scores untouched."""
    _shared_class_count(appearance, flow)
    return list(appearance) + list(flow)


def boost_fuse(
    appearance: Sequence[Detection], flow: Sequence[Detection], tau: float = 0.3
) -> List[Detection]:
    """Boost appearance scores with matched flow boxes, then L1-normalise.

    Appearance boxes are visited by descending top score; each takes the
    still-unused flow box with maximal IoU (ties: higher flow top score, then
    input order). A match with IoU > tau yields s_a + IoU * s_f. Flow boxes
    that boosted nothing are appended unmodified.
    """
    _shared_class_count(appearance, flow)
    if not appearance:
        return list(flow)

    ious = pairwise_iou(
        boxes_to_array([d.box for d in appearance]), boxes_to_array([d.box for d in flow])
    )
    flow_top = np.array([d.scores.top for d in flow], dtype=np.float64)
    used = np.zeros(len(flow), dtype=bool)

    # stable sort keeps input order among equal top scores
    visit_order = sorted(range(len(appearance)), key=lambda i: -appearance[i].scores.top)
    fused: List[Detection] = list(appearance)
    for i in visit_order:
        det = appearance[i]
        a_scores = np.asarray(det.scores.scores, dtype=np.float64)
        best = -1
        for j in range(len(flow)):
            if used[j]:
                continue
            if best < 0 or ious[i, j] > ious[i, best] or (
                ious[i, j] == ious[i, best] and flow_top[j] > flow_top[best]
            ):
                best = j
        if best >= 0 and ious[i, best] > tau:
            used[best] = True
            f_scores = np.asarray(flow[best].scores.scores, dtype=np.float64)
            a_scores = a_scores + ious[i, best] * f_scores
        fused[i] = Detection(box=det.box, scores=_l1_normalise(a_scores))

    fused.extend(flow[j] for j in range(len(flow)) if not used[j])
    return fused


def fuse(
    strategy: FusionStrategy, appearance: Sequence[Detection], flow: Sequence[Detection]
) -> List[Detection]:
    if strategy.variant == "boost":
        return boost_fuse(appearance, flow, strategy.boost_iou_threshold)
    return union_fuse(appearance, flow)
