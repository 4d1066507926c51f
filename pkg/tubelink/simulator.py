"""
Synthetic scenarios: ground-truth tubes plus the detections a perfect
detector would emit for them, and a noise model to corrupt those detections.

Every video holds instances of a single class. Co-occurring instances move in
disjoint horizontal lanes, so their boxes never overlap. Box motion is a
bounded random walk that reflects at the lane and frame edges.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tubelink.core import BoundingBox, ClassScores, Detection, FrameDetections
from tubelink.errors import DomainError
from tubelink.metrics import GroundTruthTube

logger = logging.getLogger(__name__)

DECIMALS = 6


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    frame_count: int = Field(100, ge=1)
    width: float = Field(320.0, gt=0.0)
    height: float = Field(240.0, gt=0.0)
    class_count: int = Field(3, ge=1)
    instances_per_class: int = Field(1, ge=1)
    videos_per_class: int = Field(1, ge=1)
    # box size as a fraction of the frame width and of the lane height
    box_width: float = Field(0.2, gt=0.0, le=0.5)
    box_height: float = Field(0.6, gt=0.0, le=0.9)
    drift: float = Field(2.0, ge=0.0)
    size_jitter: float = Field(0.02, ge=0.0, le=0.5)
    extent_mean: float = Field(0.7, gt=0.0, le=1.0)
    extent_spread: float = Field(0.1, ge=0.0, le=1.0)
    anchored_start: bool = True
    # explicit (first, last) frame per instance; overrides the extent draw
    fixed_extents: Optional[Tuple[Tuple[int, int], ...]] = None
    true_score_mean: float = Field(0.8, ge=0.0, le=1.0)
    off_score_mean: float = Field(0.1, ge=0.0, le=1.0)
    score_sd: float = Field(0.02, ge=0.0)

    @model_validator(mode="after")
    def _check_extents(self) -> "ScenarioSpec":
        if self.fixed_extents is not None:
            if len(self.fixed_extents) != self.instances_per_class:
                raise ValueError("fixed_extents needs one (first, last) pair per instance")
            for first, last in self.fixed_extents:
                if first < 0 or last < first:
                    raise ValueError(f"invalid instance extent ({first}, {last})")
        return self


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    drop_prob: float = Field(0.0, ge=0.0, le=1.0)
    box_jitter: float = Field(0.0, ge=0.0)
    fp_rate: float = Field(0.0, ge=0.0)
    score_sd: float = Field(0.0, ge=0.0)
    # redraw the top-class score around this mean when set
    true_score_mean: Optional[float] = Field(None, ge=0.0, le=1.0)
    fp_score_max: float = Field(0.3, ge=0.0, le=1.0)
    width: float = Field(320.0, gt=0.0)
    height: float = Field(240.0, gt=0.0)

    @property
    def is_identity(self) -> bool:
        return (
            self.drop_prob == 0.0
            and self.box_jitter == 0.0
            and self.fp_rate == 0.0
            and self.score_sd == 0.0
            and self.true_score_mean is None
        )


def _r(value: float) -> float:
    return round(float(value), DECIMALS)


def _reflect(value: float, low: float, high: float) -> float:
    if high <= low:
        return low
    if value < low:
        value = 2 * low - value
    elif value > high:
        value = 2 * high - value
    return min(max(value, low), high)


def _scores(rng: np.random.Generator, spec: ScenarioSpec, class_id: int) -> ClassScores:
    means = np.full(spec.class_count, spec.off_score_mean)
    means[class_id] = spec.true_score_mean
    values = np.clip(rng.normal(means, spec.score_sd), 0.0, 1.0)
    return ClassScores(scores=tuple(_r(v) for v in values))


def _extents(rng: np.random.Generator, spec: ScenarioSpec) -> List[Tuple[int, int]]:
    if spec.fixed_extents is not None:
        for first, last in spec.fixed_extents:
            if last >= spec.frame_count:
                raise DomainError(
                    f"instance ({first}, {last}) longer than the {spec.frame_count}-frame video"
                )
        return [tuple(extent) for extent in spec.fixed_extents]

    extents = []
    for i in range(spec.instances_per_class):
        fraction = float(np.clip(rng.normal(spec.extent_mean, spec.extent_spread), 0.05, 1.0))
        length = max(1, min(spec.frame_count, int(round(fraction * spec.frame_count))))
        if i == 0 and spec.anchored_start:
            start = 0
        else:
            start = int(rng.integers(0, spec.frame_count - length + 1))
        extents.append((start, start + length - 1))
    return extents


def _walk(
    rng: np.random.Generator, spec: ScenarioSpec, lane: int, length: int
) -> List[BoundingBox]:
    """Bounded random walk of one box inside its lane."""
    lane_height = spec.height / spec.instances_per_class
    lane_top = lane * lane_height
    base_w = spec.box_width * spec.width
    base_h = spec.box_height * lane_height
    w, h = base_w, base_h
    cx = float(rng.uniform(w / 2, spec.width - w / 2))
    cy = lane_top + lane_height / 2

    boxes = []
    for _ in range(length):
        x1, y1 = _r(cx - w / 2), _r(cy - h / 2)
        x2, y2 = _r(cx + w / 2), _r(cy + h / 2)
        boxes.append(BoundingBox(x1=x1, y1=y1, x2=x2, y2=y2))

        if spec.size_jitter > 0:
            w = float(np.clip(w * (1 + rng.uniform(-spec.size_jitter, spec.size_jitter)), 0.5 * base_w, 1.5 * base_w))
            h = float(np.clip(h * (1 + rng.uniform(-spec.size_jitter, spec.size_jitter)), 0.5 * base_h, 0.95 * lane_height))
        if spec.drift > 0:
            cx += float(rng.uniform(-spec.drift, spec.drift))
            cy += float(rng.uniform(-spec.drift, spec.drift))
        w = min(w, spec.width)
        cx = _reflect(cx, w / 2, spec.width - w / 2)
        cy = _reflect(cy, lane_top + h / 2, lane_top + lane_height - h / 2)
    return boxes


def video_name(class_id: int, index: int) -> str:
    return f"c{class_id:02d}_v{index:02d}"


def generate_scenario(
    spec: ScenarioSpec,
) -> Tuple[List[GroundTruthTube], List[FrameDetections]]:
    """Ground-truth tubes and the clean detection stream of a scenario.

    Videos are emitted one after the other, every frame of every video
    included (frames without instances carry no detections).
    """
    rng = np.random.default_rng(spec.seed)
    gts: List[GroundTruthTube] = []
    stream: List[FrameDetections] = []
    for class_id in range(spec.class_count):
        for index in range(spec.videos_per_class):
            video_id = video_name(class_id, index)
            frames: Dict[int, List[Detection]] = {t: [] for t in range(spec.frame_count)}
            for lane, (first, last) in enumerate(_extents(rng, spec)):
                boxes = _walk(rng, spec, lane, last - first + 1)
                gts.append(
                    GroundTruthTube(video_id=video_id, class_id=class_id, start=first, boxes=tuple(boxes))
                )
                for offset, box in enumerate(boxes):
                    frames[first + offset].append(
                        Detection(box=box, scores=_scores(rng, spec, class_id))
                    )
            stream.extend(
                FrameDetections(video_id=video_id, frame_index=t, detections=tuple(frames[t]))
                for t in range(spec.frame_count)
            )
    logger.info(
        "generated %d videos, %d ground-truth tubes, %d frames",
        spec.class_count * spec.videos_per_class,
        len(gts),
        len(stream),
    )
    return gts, stream


def _jitter_box(rng: np.random.Generator, box: BoundingBox, noise: NoiseSpec) -> BoundingBox:
    x1, y1, x2, y2 = np.asarray(box.as_list()) + rng.normal(0.0, noise.box_jitter, 4)
    x1 = min(max(x1, 0.0), noise.width - 1.0)
    y1 = min(max(y1, 0.0), noise.height - 1.0)
    x2 = min(max(x2, x1 + 1.0), noise.width)
    y2 = min(max(y2, y1 + 1.0), noise.height)
    return BoundingBox(x1=_r(x1), y1=_r(y1), x2=_r(x2), y2=_r(y2))


def _perturb_scores(rng: np.random.Generator, scores: ClassScores, noise: NoiseSpec) -> ClassScores:
    values = np.asarray(scores.scores, dtype=np.float64)
    if noise.true_score_mean is not None:
        values[int(np.argmax(values))] = rng.normal(noise.true_score_mean, noise.score_sd)
    if noise.score_sd > 0:
        values = values + rng.normal(0.0, noise.score_sd, values.size)
    return ClassScores(scores=tuple(_r(v) for v in np.clip(values, 0.0, 1.0)))


def _false_positive(rng: np.random.Generator, noise: NoiseSpec, class_count: int) -> Detection:
    w = float(rng.uniform(0.05, 0.3)) * noise.width
    h = float(rng.uniform(0.05, 0.3)) * noise.height
    x1 = float(rng.uniform(0.0, noise.width - w))
    y1 = float(rng.uniform(0.0, noise.height - h))
    box = BoundingBox(x1=_r(x1), y1=_r(y1), x2=_r(x1 + w), y2=_r(y1 + h))
    scores = rng.uniform(0.0, noise.fp_score_max, class_count)
    return Detection(box=box, scores=ClassScores(scores=tuple(_r(v) for v in scores)))


def corrupt(
    stream: Sequence[FrameDetections],
    noise: NoiseSpec,
    seed: int = 0,
    class_count: Optional[int] = None,
) -> List[FrameDetections]:
    """Drop, jitter and re-score detections, and inject false positives.

    ``class_count`` is only needed for false positives when the stream has
    no detection to infer it from.
    """
    if noise.is_identity:
        return list(stream)
    if class_count is None:
        class_count = next(
            (rec.detections[0].class_count for rec in stream if rec.detections), None
        )
    if class_count is None and noise.fp_rate > 0:
        raise DomainError("class_count is required to inject false positives into an empty stream")

    rng = np.random.default_rng(seed)
    noisy: List[FrameDetections] = []
    for record in stream:
        kept: List[Detection] = []
        for det in record.detections:
            if rng.random() < noise.drop_prob:
                continue
            box = _jitter_box(rng, det.box, noise) if noise.box_jitter > 0 else det.box
            scores = det.scores
            if noise.score_sd > 0 or noise.true_score_mean is not None:
                scores = _perturb_scores(rng, det.scores, noise)
            kept.append(Detection(box=box, scores=scores))
        if noise.fp_rate > 0:
            kept.extend(_false_positive(rng, noise, class_count) for _ in range(int(rng.poisson(noise.fp_rate))))
        noisy.append(record.model_copy(update={"detections": tuple(kept)}))
    return noisy
