"""
Online temporal labelling of action tubes.

Each box r of a tube gets a binary label l_r in {ACTION, BACKGROUND}; the
labelling maximises

    E(l) = sum_r s_{l_r}(b_r) - alpha * (number of label switches)

with s_ACTION(b) = s_c(b) and s_BACKGROUND(b) = 1 - s_c(b). The Viterbi
accumulators and backpointers are extended by one box per frame in O(1), and
an optimal labelling can be read back at any time in O(T).
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from tubelink.core import TubeBox
from tubelink.errors import DomainError

if TYPE_CHECKING:
    from tubelink.linker import ActionTube

BACKGROUND = 0
ACTION = 1


class Labeling(BaseModel):
    """Binary labels l_1..l_T; ACTION means "the tube's class c"."""

    model_config = ConfigDict(frozen=True)

    labels: Tuple[int, ...]

    @field_validator("labels")
    @classmethod
    def _binary(cls, labels: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(label not in (BACKGROUND, ACTION) for label in labels):
            raise ValueError("labels must be ACTION (1) or BACKGROUND (0)")
        return labels

    def __len__(self) -> int:
        return len(self.labels)


class TubeSegment(BaseModel):
    """A maximal run of ACTION-labelled boxes of one tube."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    class_id: int = Field(ge=0)
    tube_id: int = Field(ge=0)
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    boxes: Tuple[TubeBox, ...] = Field(min_length=1)
    score: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_extent(self) -> "TubeSegment":
        if self.start > self.end:
            raise ValueError(f"segment start {self.start} after end {self.end}")
        return self


@dataclass
class ViterbiState:
    """Incremental two-label Viterbi table of one tube.

    ``backpointers[i]`` holds, for chain position ``len(fixed) + 1 + i``, the
    best predecessor label of each label as ``(for BACKGROUND, for ACTION)``.
    ``fixed`` is the label prefix finalised at the coalescence point; it stays
    empty unless ``coalescence`` is enabled.
    """

    length: int = 0
    v_action: float = 0.0
    v_background: float = 0.0
    backpointers: List[Tuple[int, int]] = field(default_factory=list)
    fixed: List[int] = field(default_factory=list)
    coalescence: bool = False

    def copy(self) -> "ViterbiState":
        return ViterbiState(
            length=self.length,
            v_action=self.v_action,
            v_background=self.v_background,
            backpointers=list(self.backpointers),
            fixed=list(self.fixed),
            coalescence=self.coalescence,
        )


def unary_score(label: int, score: float) -> float:
    return score if label == ACTION else 1.0 - score


def labeling_energy(
    labels: Union[Labeling, Sequence[int]], scores: Sequence[float], alpha: float
) -> float:
    """Evaluate E(l) exactly for the given labels and class scores."""
    if isinstance(labels, Labeling):
        labels = labels.labels
    if len(labels) != len(scores):
        raise DomainError(f"{len(labels)} labels for {len(scores)} scores")
    energy = 0.0
    for label, score in zip(labels, scores):
        energy += unary_score(label, score)
    switches = sum(1 for prev, cur in zip(labels, labels[1:]) if prev != cur)
    return energy - alpha * switches


def _step(v_action: float, v_background: float, score: float, alpha: float):
    """One Viterbi recursion step; ties prefer ACTION as predecessor."""
    switch_to_action = v_background - alpha
    if v_action >= switch_to_action:
        new_action, from_action = v_action + score, ACTION
    else:
        new_action, from_action = switch_to_action + score, BACKGROUND

    switch_to_background = v_action - alpha
    if switch_to_background >= v_background:
        new_background, from_background = switch_to_background + (1.0 - score), ACTION
    else:
        new_background, from_background = v_background + (1.0 - score), BACKGROUND
    return new_action, new_background, (from_background, from_action)


def append_box(state: ViterbiState, score: float, alpha: float) -> ViterbiState:
    """Extend the chain by one box with class score ``score`` (in place)."""
    if state.length == 0:
        state.v_action = score
        state.v_background = 1.0 - score
        state.length = 1
        return state
    state.v_action, state.v_background, pointers = _step(
        state.v_action, state.v_background, score, alpha
    )
    state.backpointers.append(pointers)
    state.length += 1
    if state.coalescence:
        _advance_coalescence(state)
    return state


def _advance_coalescence(state: ViterbiState) -> None:
    """Finalise the prefix on which both surviving paths agree."""
    start = len(state.fixed)
    background_path, action_path = BACKGROUND, ACTION
    for r in range(state.length - 1, start, -1):
        pointers = state.backpointers[r - start - 1]
        background_path, action_path = pointers[background_path], pointers[action_path]
        if background_path != action_path:
            continue
        point = r - 1
        prefix = [0] * (point - start + 1)
        label = action_path
        prefix[-1] = label
        for q in range(point, start, -1):
            label = state.backpointers[q - start - 1][label]
            prefix[q - start - 1] = label
        state.fixed.extend(prefix)
        del state.backpointers[: point - start + 1]
        return


def extract_labeling(state: ViterbiState) -> Labeling:
    """Viterbi backward pass; does not modify ``state``."""
    if state.length == 0:
        raise DomainError("cannot extract a labelling from an empty chain")
    start = len(state.fixed)
    labels = [0] * state.length
    labels[:start] = state.fixed
    labels[-1] = ACTION if state.v_action >= state.v_background else BACKGROUND
    for r in range(state.length - 1, start, -1):
        labels[r - 1] = state.backpointers[r - start - 1][labels[r]]
    return Labeling(labels=tuple(labels))


def batch_viterbi(scores: Sequence[float], alpha: float) -> Labeling:
    """Offline Viterbi over a complete score list (same tie rule)."""
    if len(scores) == 0:
        raise DomainError("cannot label an empty chain")
    length = len(scores)
    values = np.zeros((length, 2), dtype=np.float64)
    pointers = np.zeros((length, 2), dtype=np.int64)
    values[0, ACTION] = scores[0]
    values[0, BACKGROUND] = 1.0 - scores[0]
    for t in range(1, length):
        v_action, v_background, (from_background, from_action) = _step(
            float(values[t - 1, ACTION]), float(values[t - 1, BACKGROUND]), float(scores[t]), alpha
        )
        values[t, ACTION], values[t, BACKGROUND] = v_action, v_background
        pointers[t, ACTION], pointers[t, BACKGROUND] = from_action, from_background

    labels = np.zeros(length, dtype=np.int64)
    labels[-1] = ACTION if values[-1, ACTION] >= values[-1, BACKGROUND] else BACKGROUND
    for t in range(length - 1, 0, -1):
        labels[t - 1] = pointers[t, labels[t]]
    return Labeling(labels=tuple(int(v) for v in labels))


def trim_to_segments(tube: "ActionTube") -> List[TubeSegment]:
    """Split a tube into its maximal ACTION-labelled runs."""
    if not tube.boxes:
        raise DomainError(f"tube {tube.tube_id} has no boxes")
    labels = extract_labeling(tube.viterbi).labels
    if len(labels) != len(tube.boxes):
        raise DomainError(
            f"tube {tube.tube_id}: labelling covers {len(labels)} of {len(tube.boxes)} boxes"
        )

    segments: List[TubeSegment] = []
    run: List[TubeBox] = []
    for label, box in zip(labels + (BACKGROUND,), list(tube.boxes) + [None]):
        if label == ACTION:
            run.append(box)
            continue
        if run:
            segments.append(
                TubeSegment(
                    video_id=tube.video_id,
                    class_id=tube.class_id,
                    tube_id=tube.tube_id,
                    start=run[0].frame_index,
                    end=run[-1].frame_index,
                    boxes=tuple(run),
                    score=min(1.0, sum(b.score for b in run) / len(run)),
                )
            )
            run = []
    return segments
