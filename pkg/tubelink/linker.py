"""
Online greedy tube association.

For every new frame and every class independently:
  1. sort active tubes by decreasing mean score (older tube first on ties);
  2. each tube, in that order, takes the highest-scoring still available
     candidate whose IoU with the tube's last box exceeds lambda;
  3. a tube without a match records a miss and is terminated on the k-th
     consecutive miss;
  4. every candidate left over starts a new tube.
Matched tubes extend their Viterbi labelling by one box.
"""

import copy
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence

import numpy as np

from tubelink.config import Config
from tubelink.core import FrameDetections, TubeBox, boxes_to_array, pairwise_iou
from tubelink.errors import DomainError, SequencingError
from tubelink.labeler import ViterbiState, append_box
from tubelink.suppression import ClassDetection

logger = logging.getLogger(__name__)

__all__ = [
    "ActionTube",
    "LinkerState",
    "TubeBox",
    "advance_frame",
    "tube_mean_score",
]


@dataclass
class ActionTube:
    tube_id: int
    class_id: int
    video_id: str = ""
    boxes: List[TubeBox] = field(default_factory=list)
    miss_count: int = 0
    viterbi: ViterbiState = field(default_factory=ViterbiState)
    terminated: bool = False
    score_sum: float = 0.0

    @property
    def last_box(self) -> TubeBox:
        return self.boxes[-1]

    @property
    def start_frame(self) -> int:
        return self.boxes[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.boxes[-1].frame_index


def tube_mean_score(tube: ActionTube) -> float:
    """Mean class score of the tube's member boxes."""
    if not tube.boxes:
        raise DomainError(f"tube {tube.tube_id} has no boxes")
    return min(1.0, tube.score_sum / len(tube.boxes))


class LinkerState:
    """Per-class active and terminated tubes of one video stream."""

    def __init__(self, config: Config, video_id: str = ""):
        self.config = config
        self.video_id = video_id
        self.frame_index: Optional[int] = None
        self.active: Dict[int, List[ActionTube]] = {c: [] for c in range(config.class_count)}
        self.terminated: Dict[int, List[ActionTube]] = {c: [] for c in range(config.class_count)}
        self.next_tube_id: Dict[int, int] = {c: 0 for c in range(config.class_count)}

    def tubes(self, class_id: int) -> List[ActionTube]:
        """Active and terminated tubes of one class, oldest first."""
        return sorted(self.active[class_id] + self.terminated[class_id], key=lambda t: t.tube_id)

    def all_tubes(self) -> Iterator[ActionTube]:
        for c in range(self.config.class_count):
            yield from self.tubes(c)

    def active_count(self) -> int:
        return sum(len(tubes) for tubes in self.active.values())

    def snapshot(self) -> "LinkerState":
        return copy.deepcopy(self)


def _extend(tube: ActionTube, candidate: ClassDetection, frame_index: int, alpha: float) -> None:
    tube.boxes.append(TubeBox(frame_index=frame_index, box=candidate.box, score=candidate.score))
    tube.score_sum += candidate.score
    tube.miss_count = 0
    append_box(tube.viterbi, candidate.score, alpha)


def _advance_class(
    state: LinkerState, class_id: int, frame_index: int, candidates: Sequence[ClassDetection]
) -> None:
    cfg = state.config
    tubes = sorted(state.active[class_id], key=lambda t: (-tube_mean_score(t), t.tube_id))
    available = np.ones(len(candidates), dtype=bool)
    scores = np.array([cand.score for cand in candidates], dtype=np.float64)
    if tubes and candidates:
        ious = pairwise_iou(
            boxes_to_array([t.last_box.box for t in tubes]),
            boxes_to_array([cand.box for cand in candidates]),
        )

    survivors: List[ActionTube] = []
    for i, tube in enumerate(tubes):
        match = -1
        if candidates:
            potential = (ious[i] > cfg.lambda_) & available
            if potential.any():
                # argmax returns the first maximum: higher NMS rank wins ties
                match = int(np.argmax(np.where(potential, scores, -np.inf)))
        if match >= 0:
            available[match] = False
            _extend(tube, candidates[match], frame_index, cfg.alpha)
            survivors.append(tube)
            continue
        tube.miss_count += 1
        if tube.miss_count >= cfg.k:
            tube.terminated = True
            state.terminated[class_id].append(tube)
        else:
            survivors.append(tube)

    for j in np.flatnonzero(available):
        tube = ActionTube(
            tube_id=state.next_tube_id[class_id],
            class_id=class_id,
            video_id=state.video_id,
            viterbi=ViterbiState(coalescence=cfg.coalescence),
        )
        state.next_tube_id[class_id] += 1
        _extend(tube, candidates[int(j)], frame_index, cfg.alpha)
        survivors.append(tube)

    state.active[class_id] = sorted(survivors, key=lambda t: t.tube_id)


def _check_candidates(config: Config, fused_per_class: Mapping[int, Sequence[ClassDetection]]) -> None:
    for class_id, candidates in fused_per_class.items():
        if not (0 <= class_id < config.class_count):
            raise DomainError(f"candidate class {class_id} outside 0..{config.class_count - 1}")
        if len(candidates) > config.n:
            raise DomainError(
                f"class {class_id}: {len(candidates)} candidates exceed n={config.n}"
            )
        if any(cand.class_id != class_id for cand in candidates):
            raise DomainError(f"class {class_id}: candidate list mixes classes")


def advance_frame(
    state: LinkerState,
    frame: FrameDetections,
    fused_per_class: Mapping[int, Sequence[ClassDetection]],
    executor: Optional[Executor] = None,
) -> LinkerState:
    """Associate one frame's per-class candidates with the state's tubes.

    Classes are independent; with an ``executor`` they are advanced
    concurrently. Classes missing from ``fused_per_class`` have no candidates.
    """
    if state.frame_index is not None and frame.frame_index <= state.frame_index:
        raise SequencingError(
            f"video {frame.video_id!r}: frame {frame.frame_index} does not follow {state.frame_index}"
        )
    if state.video_id and frame.video_id != state.video_id:
        raise DomainError(f"frame of video {frame.video_id!r} fed to stream {state.video_id!r}")
    _check_candidates(state.config, fused_per_class)
    state.video_id = frame.video_id

    def run(class_id: int) -> None:
        _advance_class(state, class_id, frame.frame_index, fused_per_class.get(class_id, ()))

    classes = range(state.config.class_count)
    if executor is not None:
        list(executor.map(run, classes))
    else:
        for class_id in classes:
            run(class_id)

    state.frame_index = frame.frame_index
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "video %s frame %d: %d active tubes", state.video_id, frame.frame_index, state.active_count()
        )
    return state
