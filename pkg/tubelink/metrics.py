"""
Spatio-temporal evaluation of trimmed tubes.

ST-IoU between a predicted segment and a ground-truth tube is the temporal
Jaccard of their frame sets times the mean per-frame spatial IoU over the
shared frames. Predictions are matched greedily per class, best score first;
a match is a true positive iff its ST-IoU reaches the threshold delta.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tubelink.config import Config
from tubelink.core import BoundingBox, FrameDetections, spatial_iou
from tubelink.errors import DomainError
from tubelink.fusion import FusionStrategy
from tubelink.labeler import TubeSegment
from tubelink.pipeline import replay_checkpoints

logger = logging.getLogger(__name__)

DEFAULT_DELTAS: Tuple[float, ...] = (0.2, 0.5, 0.75)
RANGE_DELTAS: Tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_CHECKPOINTS: Tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 11))


class GroundTruthTube(BaseModel):
    """Annotated tube: one box per frame over start..start+len(boxes)-1."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    class_id: int = Field(ge=0)
    start: int = Field(ge=0)
    boxes: Tuple[BoundingBox, ...] = Field(min_length=1)

    @property
    def end(self) -> int:
        return self.start + len(self.boxes) - 1

    def frame_boxes(self) -> Dict[int, BoundingBox]:
        return {self.start + i: box for i, box in enumerate(self.boxes)}

    def truncate(self, last_frame: int) -> Optional["GroundTruthTube"]:
        """The part of the tube observed up to ``last_frame``, or None."""
        if last_frame < self.start:
            return None
        if last_frame >= self.end:
            return self
        return self.model_copy(update={"boxes": self.boxes[: last_frame - self.start + 1]})


class MetricCurve(BaseModel):
    """Metric values indexed by observed fraction of the video."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["auc", "map", "accuracy"]
    delta: Optional[float] = None
    fractions: Tuple[float, ...]
    values: Tuple[float, ...]

    @model_validator(mode="after")
    def _check(self) -> "MetricCurve":
        if len(self.fractions) != len(self.values):
            raise ValueError("one value per fraction is required")
        if any(b <= a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be strictly increasing")
        if any(not (0.0 <= v <= 1.0) for v in self.values):
            raise ValueError("metric values are fractions in [0, 1]")
        return self


@dataclass
class MatchResult:
    """Outcome of greedy matching of one class's predictions (score order)."""

    scores: np.ndarray
    is_tp: np.ndarray
    matched_gt: List[Optional[int]]
    num_gt: int


@dataclass
class MapResult:
    mean_ap: float
    per_class: Dict[int, Optional[float]]


def st_iou(pred: TubeSegment, gt: GroundTruthTube) -> float:
    """Spatio-temporal IoU of a predicted segment and a ground-truth tube."""
    if pred.video_id != gt.video_id:
        raise DomainError(f"st_iou across videos {pred.video_id!r} and {gt.video_id!r}")
    pred_boxes = {tb.frame_index: tb.box for tb in pred.boxes}
    gt_boxes = gt.frame_boxes()
    shared = sorted(pred_boxes.keys() & gt_boxes.keys())
    if not shared:
        return 0.0
    union = len(pred_boxes.keys() | gt_boxes.keys())
    spatial = sum(spatial_iou(pred_boxes[f], gt_boxes[f]) for f in shared) / len(shared)
    return min(1.0, (len(shared) / union) * spatial)


def match_predictions(
    preds: Sequence[TubeSegment], gts: Sequence[GroundTruthTube], delta: float
) -> MatchResult:
    """Greedy best-first matching; each ground truth is matched at most once."""
    if not (0.0 < delta <= 1.0):
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    matched = [False] * len(gts)
    scores = np.zeros(len(order), dtype=np.float64)
    is_tp = np.zeros(len(order), dtype=bool)
    matched_gt: List[Optional[int]] = []
    for rank, i in enumerate(order):
        pred = preds[i]
        scores[rank] = pred.score
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if matched[g] or gt.video_id != pred.video_id or gt.class_id != pred.class_id:
                continue
            overlap = st_iou(pred, gt)
            if overlap > best_iou:
                best, best_iou = g, overlap
        if best is not None and best_iou >= delta:
            matched[best] = True
            is_tp[rank] = True
            matched_gt.append(best)
        else:
            matched_gt.append(None)
    return MatchResult(scores=scores, is_tp=is_tp, matched_gt=matched_gt, num_gt=len(gts))


def voc_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated AP under the monotone precision envelope."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    changes = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def average_precision(
    preds: Sequence[TubeSegment], gts: Sequence[GroundTruthTube], delta: float
) -> Optional[float]:
    """AP of one class's predictions; None when the class has no ground truth."""
    if not gts:
        return None
    result = match_predictions(preds, gts, delta)
    if result.scores.size == 0:
        return 0.0
    tp = np.cumsum(result.is_tp).astype(np.float64)
    fp = np.cumsum(~result.is_tp).astype(np.float64)
    recall = tp / float(result.num_gt)
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return min(1.0, voc_ap(recall, precision))


def _by_class(
    preds: Iterable[TubeSegment], gts: Iterable[GroundTruthTube]
) -> Tuple[Dict[int, List[TubeSegment]], Dict[int, List[GroundTruthTube]]]:
    pred_map: Dict[int, List[TubeSegment]] = defaultdict(list)
    gt_map: Dict[int, List[GroundTruthTube]] = defaultdict(list)
    for pred in preds:
        pred_map[pred.class_id].append(pred)
    for gt in gts:
        gt_map[gt.class_id].append(gt)
    return pred_map, gt_map


def map_at(
    preds: Sequence[TubeSegment], gts: Sequence[GroundTruthTube], delta: float
) -> MapResult:
    """Mean of the defined per-class APs at threshold delta."""
    pred_map, gt_map = _by_class(preds, gts)
    per_class: Dict[int, Optional[float]] = {}
    for class_id in sorted(pred_map.keys() | gt_map.keys()):
        per_class[class_id] = average_precision(pred_map[class_id], gt_map[class_id], delta)
    defined = [ap for ap in per_class.values() if ap is not None]
    undefined = [c for c, ap in per_class.items() if ap is None]
    if undefined:
        logger.debug("classes without ground truth excluded from mAP: %s", undefined)
    mean_ap = float(np.mean(defined)) if defined else 0.0
    return MapResult(mean_ap=mean_ap, per_class=per_class)


def map_avg_range(
    preds: Sequence[TubeSegment],
    gts: Sequence[GroundTruthTube],
    deltas: Sequence[float] = RANGE_DELTAS,
) -> float:
    """mAP averaged over delta = 0.50, 0.55, ..., 0.95."""
    return float(np.mean([map_at(preds, gts, delta).mean_ap for delta in deltas]))


def _class_auc(preds: Sequence[TubeSegment], gts: Sequence[GroundTruthTube], delta: float) -> float:
    result = match_predictions(preds, gts, delta)
    if result.scores.size == 0 or result.num_gt == 0:
        return 0.0
    # one ROC point per distinct score threshold; ties step together
    cuts = np.r_[np.flatnonzero(np.diff(result.scores)), result.scores.size - 1]
    tp = np.cumsum(result.is_tp).astype(np.float64)[cuts]
    fp = np.cumsum(~result.is_tp).astype(np.float64)[cuts]
    tpr = np.concatenate(([0.0], tp / result.num_gt))
    total_fp = fp[-1]
    if total_fp == 0:
        # no false positives: the curve rises at FPR 0 and stays at its final TPR
        return float(tpr[-1])
    fpr = np.concatenate(([0.0], fp / total_fp))
    area = np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) * 0.5)
    return float(min(1.0, area))


def auc_at(preds: Sequence[TubeSegment], gts: Sequence[GroundTruthTube], delta: float) -> float:
    """Area under the TPR/FPR curve, averaged over classes with ground truth.

    The false-positive rate is normalised by the number of false positives at
    the lowest score threshold. No predictions give 0.
    """
    if not preds:
        return 0.0
    pred_map, gt_map = _by_class(preds, gts)
    values = [_class_auc(pred_map[c], gt_map[c], delta) for c in sorted(gt_map)]
    return float(np.mean(values)) if values else 0.0


def video_labels(gts: Iterable[GroundTruthTube]) -> Dict[str, int]:
    """Most frequent ground-truth class per video (ties: lower class id)."""
    counts: Dict[str, Counter] = defaultdict(Counter)
    for gt in gts:
        counts[gt.video_id][gt.class_id] += 1
    return {
        video: min(counter.items(), key=lambda item: (-item[1], item[0]))[0]
        for video, counter in counts.items()
    }


def online_curves(
    stream: Sequence[FrameDetections],
    gts: Sequence[GroundTruthTube],
    deltas: Sequence[float] = DEFAULT_DELTAS,
    checkpoints: Sequence[float] = DEFAULT_CHECKPOINTS,
    config: Optional[Config] = None,
    fusion: Optional[FusionStrategy] = None,
    flow: Optional[Sequence[FrameDetections]] = None,
) -> List[MetricCurve]:
    """Replay the pipeline and record AUC / mAP / accuracy per checkpoint.

    The stream is processed frame by frame once per video; at each checkpoint
    the current segments and prediction are evaluated against ground truth
    truncated to the frames observed so far. A ground-truth video without any
    detection record keeps its full ground truth and counts as mispredicted,
    so the last checkpoint agrees with the offline metrics.
    """
    if not stream:
        raise DomainError("cannot evaluate an empty stream")
    snapshots = replay_checkpoints(stream, checkpoints, config=config, fusion=fusion, flow=flow)
    labels = video_labels(gts)
    unseen = sorted({gt.video_id for gt in gts} - snapshots.keys())
    if unseen:
        logger.warning(
            "%d ground-truth videos have no detection records: %s", len(unseen), ", ".join(unseen[:5])
        )
    # never observed: evaluated on the full ground truth with no predictions
    unseen_gts = [gt for gt in gts if gt.video_id not in snapshots]

    auc_values: Dict[float, List[float]] = {delta: [] for delta in deltas}
    map_values: Dict[float, List[float]] = {delta: [] for delta in deltas}
    accuracy: List[float] = []
    for index, _fraction in enumerate(checkpoints):
        segments: List[TubeSegment] = []
        truncated: List[GroundTruthTube] = list(unseen_gts)
        correct = 0
        for video_id, video_snapshots in snapshots.items():
            snap = video_snapshots[index]
            segments.extend(snap.segments)
            for gt in gts:
                if gt.video_id != video_id:
                    continue
                part = gt.truncate(snap.last_frame)
                if part is not None:
                    truncated.append(part)
            if video_id in labels and snap.prediction is not None:
                correct += int(snap.prediction.class_id == labels[video_id])
        # unseen videos stay in the denominator as wrong predictions
        accuracy.append(correct / len(labels) if labels else 0.0)
        for delta in deltas:
            auc_values[delta].append(auc_at(segments, truncated, delta))
            map_values[delta].append(map_at(segments, truncated, delta).mean_ap)

    fractions = tuple(float(p) for p in checkpoints)
    curves = [MetricCurve(kind="accuracy", fractions=fractions, values=tuple(accuracy))]
    for delta in deltas:
        curves.append(MetricCurve(kind="map", delta=delta, fractions=fractions, values=tuple(map_values[delta])))
        curves.append(MetricCurve(kind="auc", delta=delta, fractions=fractions, values=tuple(auc_values[delta])))
    return curves
