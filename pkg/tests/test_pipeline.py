import logging

import pytest

from tubelink.config import Config
from tubelink.core import Detection, FrameDetections
from tubelink.errors import SequencingError
from tubelink.fusion import FusionStrategy
from tubelink.pipeline import (
    TubePipeline,
    VideoTubeBuilder,
    align_streams,
    replay_checkpoints,
)
from tubelink.simulator import NoiseSpec, ScenarioSpec, corrupt, generate_scenario


def record(video, frame, *dets):
    return FrameDetections(video_id=video, frame_index=frame, detections=tuple(dets))


def det(coords, scores):
    return Detection.of(coords, scores)


@pytest.fixture(scope="module")
def noisy_scenario():
    spec = ScenarioSpec(seed=31, frame_count=80, class_count=3, instances_per_class=2)
    gts, clean = generate_scenario(spec)
    noise = NoiseSpec(drop_prob=0.1, box_jitter=2.0, fp_rate=0.5, score_sd=0.05)
    return gts, clean, corrupt(clean, noise, seed=32), corrupt(clean, noise, seed=33)


def _signature(results):
    return [
        (r.video_id, r.record_count, [s.model_dump() for s in r.segments], [p for _, p in r.predictions])
        for r in results
    ]


def test_align_pairs_matching_frames():
    appearance = [record("a", 0), record("a", 1), record("b", 0)]
    flow = [record("a", 0), record("a", 1), record("b", 0)]
    pairs = list(align_streams(appearance, flow))
    assert [(a.frame_index, f.frame_index) for a, f in pairs] == [(0, 0), (1, 1), (0, 0)]


def test_missing_flow_frame_warns(caplog):
    appearance = [record("a", 0), record("a", 1), record("a", 2)]
    flow = [record("a", 0), record("a", 2)]
    with caplog.at_level(logging.WARNING, logger="tubelink.pipeline"):
        pairs = list(align_streams(appearance, flow))
    assert pairs[1][1] is None
    assert pairs[2][1].frame_index == 2
    assert "missing" in caplog.text


def test_extra_flow_frames_are_skipped():
    appearance = [record("a", 1), record("b", 0)]
    flow = [record("a", 0), record("a", 1), record("a", 5), record("b", 0)]
    pairs = list(align_streams(appearance, flow))
    assert [f.video_id if f else None for _, f in pairs] == ["a", "b"]


def test_flow_videos_in_another_order_still_pair():
    appearance = [record("a", 0), record("a", 1), record("b", 0), record("b", 1)]
    flow = [record("b", 0), record("b", 1), record("a", 0), record("a", 1)]
    pairs = list(align_streams(appearance, flow))
    assert [(a.video_id, f.video_id, f.frame_index) for a, f in pairs] == [
        ("a", "a", 0),
        ("a", "a", 1),
        ("b", "b", 0),
        ("b", "b", 1),
    ]


def test_leading_flow_video_without_appearance_is_skipped_once(caplog):
    appearance = [record("a", t) for t in range(4)]
    flow = [record("x", t) for t in range(3)] + [record("a", t) for t in range(4)]
    with caplog.at_level(logging.WARNING, logger="tubelink.pipeline"):
        pairs = list(align_streams(appearance, flow))
    assert all(f is not None and f.video_id == "a" for _, f in pairs)
    warnings = [r.getMessage() for r in caplog.records]
    assert warnings == ["flow video x: 3 frames have no appearance records, skipped"]


def test_flow_gaps_are_summarised_per_video(caplog):
    appearance = [record("a", t) for t in range(5)] + [record("b", t) for t in range(3)]
    flow = [record("a", 0)]
    with caplog.at_level(logging.WARNING, logger="tubelink.pipeline"):
        pairs = list(align_streams(appearance, flow))
    assert [f is None for _, f in pairs] == [False] + [True] * 7
    assert [r.getMessage() for r in caplog.records] == [
        "video a: flow missing for 4 of 5 frames, used empty flow sets",
        "video b: flow missing for 3 of 3 frames, used empty flow sets",
    ]


def test_no_flow_stream():
    appearance = [record("a", 0)]
    assert list(align_streams(appearance, None)) == [(appearance[0], None)]


def test_builder_fuses_before_suppressing():
    config = Config(class_count=2)
    appearance = record("v", 0, det([0, 0, 10, 10], [0.6, 0.4]))
    flow = record("v", 0, det([0, 0, 10, 10], [0.8, 0.2]))

    union = VideoTubeBuilder(config, "v", FusionStrategy(variant="union_set"))
    assert [c.score for c in union.candidates(appearance, flow)[0]] == [0.8]

    boost = VideoTubeBuilder(config, "v", FusionStrategy(variant="boost"))
    assert [c.score for c in boost.candidates(appearance, flow)[0]] == pytest.approx([0.7])

    single = VideoTubeBuilder(config, "v")
    assert [c.score for c in single.candidates(appearance, flow)[0]] == [0.6]


def test_builder_process_and_snapshot():
    builder = VideoTubeBuilder(Config(class_count=1), "v")
    assert builder.process(record("v", 0, det([0, 0, 10, 10], [0.9]))).class_id == 0
    builder.process(record("v", 1, det([1, 0, 11, 10], [0.9])))
    snap = builder.snapshot(0.5)
    assert (snap.records_seen, snap.last_frame) == (2, 1)
    assert snap.prediction.observed_fraction == 0.5
    assert [(s.start, s.end) for s in snap.segments] == [(0, 1)]


def test_video_resumed_after_another_is_rejected():
    stream = [record("a", 0), record("b", 0), record("a", 1)]
    with pytest.raises(SequencingError):
        list(TubePipeline(Config(class_count=1)).run(align_streams(stream, None)))


def test_results_follow_input_order(noisy_scenario):
    _, _, appearance, _ = noisy_scenario
    results = list(TubePipeline(Config(class_count=3)).run(align_streams(appearance, None)))
    assert [r.video_id for r in results] == ["c00_v00", "c01_v00", "c02_v00"]
    assert all(r.record_count == 80 for r in results)
    assert all(len(r.predictions) == 80 for r in results)


def test_streaming_and_list_input_agree(noisy_scenario):
    _, _, appearance, flow = noisy_scenario
    config = Config(class_count=3)
    strategy = FusionStrategy(variant="boost")
    from_lists = TubePipeline(config, strategy).run(align_streams(appearance, flow))
    from_generators = TubePipeline(config, strategy).run(
        align_streams((r for r in appearance), (r for r in flow))
    )
    assert _signature(from_lists) == _signature(from_generators)


def test_threads_do_not_change_results(noisy_scenario):
    _, _, appearance, _ = noisy_scenario
    sequential = TubePipeline(Config(class_count=3)).run(align_streams(appearance, None))
    threaded = TubePipeline(Config(class_count=3, threads=4)).run(align_streams(appearance, None))
    assert _signature(sequential) == _signature(threaded)


def test_replay_final_snapshot_matches_full_run(noisy_scenario):
    _, _, appearance, _ = noisy_scenario
    config = Config(class_count=3)
    snapshots = replay_checkpoints(appearance, (0.1, 0.5, 1.0), config=config)
    results = {r.video_id: r for r in TubePipeline(config).run(align_streams(appearance, None))}
    for video_id, video_snapshots in snapshots.items():
        assert [s.records_seen for s in video_snapshots] == [8, 40, 80]
        assert [s.last_frame for s in video_snapshots] == [7, 39, 79]
        assert video_snapshots[-1].segments == results[video_id].segments
        assert video_snapshots[-1].prediction == results[video_id].predictions[-1][1]


def test_replay_prefix_matches_truncated_stream(noisy_scenario):
    _, _, appearance, _ = noisy_scenario
    config = Config(class_count=3)
    video = [r for r in appearance if r.video_id == "c01_v00"]
    half = replay_checkpoints(video, (0.5,), config=config)["c01_v00"][0]
    truncated = replay_checkpoints(video[:40], (1.0,), config=config)["c01_v00"][0]
    assert half.segments == truncated.segments
    assert half.prediction.class_id == truncated.prediction.class_id
