"""Tests for online greedy tube association."""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from tubelink.config import Config
from tubelink.core import BoundingBox, FrameDetections, spatial_iou
from tubelink.errors import DomainError, SequencingError
from tubelink.linker import ActionTube, LinkerState, advance_frame, tube_mean_score
from tubelink.suppression import ClassDetection


def cand(coords, score, class_id=0):
    return ClassDetection(box=BoundingBox.from_list(coords), class_id=class_id, score=score)


def frame(index, video="v"):
    return FrameDetections(video_id=video, frame_index=index)


def step(state, index, candidates, class_id=0):
    return advance_frame(state, frame(index), {class_id: candidates})


def test_mean_score():
    tube = ActionTube(tube_id=0, class_id=0)
    with pytest.raises(DomainError):
        tube_mean_score(tube)
    state = LinkerState(Config(class_count=1))
    step(state, 0, [cand([0, 0, 10, 10], 0.9)])
    step(state, 1, [cand([0, 0, 10, 10], 0.8)])
    step(state, 2, [cand([0, 0, 10, 10], 0.7)])
    assert tube_mean_score(state.active[0][0]) == pytest.approx(0.8)


@pytest.mark.parametrize("scores, expected", [([0.8], 0.8), ([1.0, 0.0], 0.5)])
def test_mean_score_examples(scores, expected):
    state = LinkerState(Config(class_count=1))
    for t, s in enumerate(scores):
        step(state, t, [cand([0, 0, 10, 10], s)])
    assert tube_mean_score(state.active[0][0]) == pytest.approx(expected)


def test_first_frame_starts_one_tube_per_candidate():
    state = LinkerState(Config(class_count=2))
    candidates = [cand([i * 20, 0, i * 20 + 10, 10], 0.5 + 0.04 * i, class_id=1) for i in range(10)]
    advance_frame(state, frame(0), {1: candidates})
    assert len(state.active[1]) == 10
    assert state.active[0] == []
    assert [t.tube_id for t in state.active[1]] == list(range(10))


def test_overlap_at_lambda_is_a_miss():
    state = LinkerState(Config(class_count=1))
    step(state, 0, [cand([0, 0, 10, 10], 0.9)])
    # IoU with the tube's last box is exactly 0.1
    step(state, 1, [cand([0, 0, 1, 10], 0.9)])
    old, new = state.active[0]
    assert (old.tube_id, old.miss_count, len(old.boxes)) == (0, 1, 1)
    assert (new.tube_id, new.start_frame) == (1, 1)


def test_best_scoring_candidate_wins_over_best_overlap():
    state = LinkerState(Config(class_count=1))
    step(state, 0, [cand([0, 0, 10, 10], 0.9)])
    step(state, 1, [cand([0, 0, 10, 10], 0.6), cand([2, 0, 12, 10], 0.8)])
    tube = state.active[0][0]
    assert tube.last_box.score == 0.8
    assert tube.last_box.box == BoundingBox(x1=2, y1=0, x2=12, y2=10)
    assert len(state.active[0]) == 2


def test_higher_mean_tube_takes_contested_candidate():
    state = LinkerState(Config(class_count=1))
    step(state, 0, [cand([0, 0, 10, 10], 0.9), cand([20, 0, 30, 10], 0.5)])
    # overlaps both tubes with IoU 0.2
    step(state, 1, [cand([5, 0, 25, 10], 0.7)])
    strong, weak = state.active[0]
    assert len(strong.boxes) == 2 and strong.miss_count == 0
    assert len(weak.boxes) == 1 and weak.miss_count == 1


def test_termination_after_k_consecutive_misses():
    state = LinkerState(Config(class_count=1, k=5))
    box = [0, 0, 10, 10]
    step(state, 0, [cand(box, 0.9)])
    for t in range(1, 5):
        step(state, t, [])
        assert state.active[0][0].miss_count == t
        assert state.terminated[0] == []
    step(state, 5, [])
    assert state.active[0] == []
    (ended,) = state.terminated[0]
    assert ended.terminated and ended.miss_count == 5 and ended.end_frame == 0

    step(state, 6, [cand(box, 0.9)])
    (fresh,) = state.active[0]
    assert fresh.tube_id == 1
    assert fresh.start_frame == 6
    assert len(ended.boxes) == 1


def test_match_resets_miss_count():
    state = LinkerState(Config(class_count=1, k=5))
    step(state, 0, [cand([0, 0, 10, 10], 0.9)])
    for t in range(1, 5):
        step(state, t, [])
    step(state, 5, [cand([1, 0, 11, 10], 0.9)])
    tube = state.active[0][0]
    assert tube.miss_count == 0
    assert [b.frame_index for b in tube.boxes] == [0, 5]


def test_frames_must_increase():
    state = LinkerState(Config(class_count=1))
    step(state, 3, [])
    with pytest.raises(SequencingError):
        step(state, 3, [])
    with pytest.raises(SequencingError):
        step(state, 2, [])


def test_frame_gaps_are_allowed():
    state = LinkerState(Config(class_count=1))
    step(state, 0, [cand([0, 0, 10, 10], 0.9)])
    step(state, 10, [cand([0, 0, 10, 10], 0.9)])
    assert [b.frame_index for b in state.active[0][0].boxes] == [0, 10]


def test_video_mismatch():
    state = LinkerState(Config(class_count=1), video_id="a")
    with pytest.raises(DomainError):
        advance_frame(state, frame(0, video="b"), {})


@pytest.mark.parametrize(
    "candidates",
    [
        {3: []},
        {0: [cand([0, 0, 1, 1], 0.5, class_id=1)]},
        {0: [cand([i * 5, 0, i * 5 + 1, 1], 0.5) for i in range(3)]},
    ],
)
def test_invalid_candidates(candidates):
    state = LinkerState(Config(class_count=2, n=2))
    with pytest.raises(DomainError):
        advance_frame(state, frame(0), candidates)


def test_box_frames_strictly_increase_and_ids_unique():
    rng = np.random.default_rng(5)
    state = LinkerState(Config(class_count=2))
    for t in range(60):
        per_class = {}
        for c in range(2):
            count = int(rng.integers(0, 4))
            per_class[c] = [
                cand([x, 0, x + 10, 10], float(rng.uniform()), class_id=c)
                for x in sorted(rng.choice(np.arange(0, 200, 15), count, replace=False))
            ]
        advance_frame(state, frame(t), per_class)
    for c in range(2):
        tubes = state.tubes(c)
        assert len({t.tube_id for t in tubes}) == len(tubes)
        for tube in tubes:
            frames = [b.frame_index for b in tube.boxes]
            assert frames == sorted(set(frames))
            assert tube.miss_count <= state.config.k
            assert tube.viterbi.length == len(tube.boxes)


def _random_stream(seed, classes, frames):
    rng = np.random.default_rng(seed)
    stream = []
    for _ in range(frames):
        per_class = {}
        for c in range(classes):
            xs = sorted(rng.choice(np.arange(0, 300, 12), int(rng.integers(0, 5)), replace=False))
            per_class[c] = [cand([x, 0, x + 11, 10], float(rng.uniform()), class_id=c) for x in xs]
        stream.append(per_class)
    return stream


def _summary(state):
    return [
        (t.class_id, t.tube_id, t.terminated, [(b.frame_index, b.box.x1, b.score) for b in t.boxes])
        for t in state.all_tubes()
    ]


def test_parallel_classes_match_sequential():
    stream = _random_stream(42, classes=6, frames=40)
    sequential = LinkerState(Config(class_count=6))
    parallel = LinkerState(Config(class_count=6))
    with ThreadPoolExecutor(max_workers=4) as executor:
        for t, per_class in enumerate(stream):
            advance_frame(sequential, frame(t), per_class)
            advance_frame(parallel, frame(t), per_class, executor)
    assert _summary(parallel) == _summary(sequential)


def test_snapshot_is_independent():
    state = LinkerState(Config(class_count=1))
    step(state, 0, [cand([0, 0, 10, 10], 0.9)])
    frozen = state.snapshot()
    step(state, 1, [cand([0, 0, 10, 10], 0.9)])
    assert len(frozen.active[0][0].boxes) == 1
    assert frozen.frame_index == 0
    assert len(state.active[0][0].boxes) == 2


def test_links_overlap_and_every_candidate_lands_in_one_tube():
    rng = np.random.default_rng(11)
    config = Config(class_count=3)
    state = LinkerState(config)
    offered = {}
    for t in range(80):
        per_class = {}
        for c in range(3):
            xs = rng.uniform(0, 300, int(rng.integers(0, 6)))
            per_class[c] = [cand([x, 0, x + 20, 10], float(rng.uniform()), class_id=c) for x in xs]
            if per_class[c]:
                offered[(c, t)] = len(per_class[c])
        advance_frame(state, frame(t), per_class)

    placed = Counter()
    for tube in state.all_tubes():
        for prev, nxt in zip(tube.boxes, tube.boxes[1:]):
            assert spatial_iou(prev.box, nxt.box) > config.lambda_
        placed.update((tube.class_id, b.frame_index) for b in tube.boxes)
    # appended to a live tube or spawned as a new one, never both or neither
    assert dict(placed) == offered
