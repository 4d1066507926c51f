"""
Streaming pipeline: fuse -> suppress -> link -> label -> predict.

Each video is processed strictly frame by frame; nothing here looks ahead in
the appearance input. Per-class linking can run on a thread pool (``Config.threads``).
"""

import logging
import math
from collections import Counter, deque
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

from tubelink.config import Config
from tubelink.core import FrameDetections
from tubelink.errors import DomainError, SequencingError
from tubelink.fusion import FusionStrategy, fuse
from tubelink.labeler import TubeSegment, trim_to_segments
from tubelink.linker import LinkerState, advance_frame
from tubelink.predictor import VideoPrediction, predict_label
from tubelink.suppression import ClassDetection, suppress_frame

logger = logging.getLogger(__name__)

FramePair = Tuple[FrameDetections, Optional[FrameDetections]]


@dataclass
class Snapshot:
    """Outputs of one video after ``records_seen`` records."""

    records_seen: int
    last_frame: int
    segments: List[TubeSegment]
    prediction: Optional[VideoPrediction]


@dataclass
class VideoResult:
    video_id: str
    record_count: int
    segments: List[TubeSegment]
    # (frame index, prediction after that frame) for every processed record
    predictions: List[Tuple[int, Optional[VideoPrediction]]] = field(default_factory=list)


def checkpoint_positions(record_count: int, checkpoints: Sequence[float]) -> List[int]:
    """Records observed at each checkpoint fraction p: ceil(p * T)."""
    if record_count <= 0:
        raise DomainError("cannot place checkpoints in an empty video")
    return [max(1, min(record_count, math.ceil(round(p * record_count, 9)))) for p in checkpoints]


class VideoTubeBuilder:
    """Builds, trims and scores the action tubes of a single video."""

    def __init__(
        self,
        config: Config,
        video_id: str,
        strategy: Optional[FusionStrategy] = None,
        executor: Optional[Executor] = None,
    ):
        self.config = config
        self.strategy = strategy
        self.executor = executor
        self.state = LinkerState(config, video_id)
        self.records_seen = 0

    def candidates(
        self, appearance: FrameDetections, flow: Optional[FrameDetections] = None
    ) -> Dict[int, List[ClassDetection]]:
        detections = list(appearance.detections)
        if self.strategy is not None:
            flow_detections = list(flow.detections) if flow is not None else []
            detections = fuse(self.strategy, detections, flow_detections)
        return suppress_frame(detections, self.config)

    def advance(
        self, frame: FrameDetections, candidates: Dict[int, List[ClassDetection]]
    ) -> LinkerState:
        advance_frame(self.state, frame, candidates, self.executor)
        self.records_seen += 1
        return self.state

    def process(
        self, appearance: FrameDetections, flow: Optional[FrameDetections] = None
    ) -> Optional[VideoPrediction]:
        self.advance(appearance, self.candidates(appearance, flow))
        return self.prediction()

    def prediction(self, observed_fraction: float = 1.0) -> Optional[VideoPrediction]:
        return predict_label(self.state, observed_fraction)

    def segments(self) -> List[TubeSegment]:
        """Trimmed segments of every tube, by class then tube age."""
        segments: List[TubeSegment] = []
        for tube in self.state.all_tubes():
            segments.extend(trim_to_segments(tube))
        return segments

    def snapshot(self, observed_fraction: float = 1.0) -> Snapshot:
        return Snapshot(
            records_seen=self.records_seen,
            last_frame=self.state.frame_index if self.state.frame_index is not None else -1,
            segments=self.segments(),
            prediction=self.prediction(observed_fraction),
        )


class _FlowBuffer:
    """Flow records grouped by video, pulled from the flow stream on demand.

    Records of a video other than the one being matched are held until that
    video comes up, so the two streams may list their videos in any order.
    """

    def __init__(self, flow: Iterable[FrameDetections]):
        self._records = iter(flow)
        self._queues: Dict[str, Deque[FrameDetections]] = {}
        self._closed: Set[str] = set()
        self.skipped: "Counter[str]" = Counter()
        self.late: "Counter[str]" = Counter()

    def take(self, video_id: str, frame_index: int) -> Optional[FrameDetections]:
        queue = self._queues.setdefault(video_id, deque())
        while True:
            while queue and queue[0].frame_index < frame_index:
                queue.popleft()
                self.skipped[video_id] += 1
            if queue:
                return queue.popleft() if queue[0].frame_index == frame_index else None
            if not self._pull():
                return None

    def _pull(self) -> bool:
        record = next(self._records, None)
        if record is None:
            return False
        if record.video_id in self._closed:
            self.late[record.video_id] += 1
        else:
            self._queues.setdefault(record.video_id, deque()).append(record)
        return True

    def close(self, video_id: str) -> int:
        """Stop matching ``video_id``; returns its unmatched flow frame count."""
        self._closed.add(video_id)
        self.skipped[video_id] += len(self._queues.pop(video_id, ()))
        return self.skipped.pop(video_id, 0)

    def orphans(self) -> Dict[str, int]:
        """Buffered flow frames of videos no appearance record asked for."""
        return {video_id: len(queue) for video_id, queue in self._queues.items() if queue}


def _report_video(video_id: str, frames: int, missing: int, skipped: int) -> None:
    if missing:
        logger.warning(
            "video %s: flow missing for %d of %d frames, used empty flow sets",
            video_id,
            missing,
            frames,
        )
    if skipped:
        logger.warning("video %s: %d flow frames have no appearance counterpart, skipped", video_id, skipped)


def align_streams(
    appearance: Iterable[FrameDetections], flow: Optional[Iterable[FrameDetections]]
) -> Iterator[FramePair]:
    """Pair each appearance record with the flow record of the same frame.

    A missing flow frame yields ``None`` (an empty flow set). Gaps and
    unmatched flow frames are reported once per video, when the video ends.
    """
    if flow is None:
        for record in appearance:
            yield record, None
        return

    buffer = _FlowBuffer(flow)
    current: Optional[str] = None
    frames = missing = 0
    for record in appearance:
        if record.video_id != current:
            if current is not None:
                _report_video(current, frames, missing, buffer.close(current))
            current = record.video_id
            frames = missing = 0
        frames += 1
        matched = buffer.take(record.video_id, record.frame_index)
        if matched is None:
            missing += 1
            logger.debug("flow frame %s/%d missing", record.video_id, record.frame_index)
        yield record, matched
    if current is not None:
        _report_video(current, frames, missing, buffer.close(current))
    for video_id, count in sorted(buffer.orphans().items()):
        logger.warning("flow video %s: %d frames have no appearance records, skipped", video_id, count)
    for video_id, count in sorted(buffer.late.items()):
        logger.warning("flow video %s: %d frames arrived after the video ended, skipped", video_id, count)


class TubePipeline:
    """Drives one VideoTubeBuilder per video over an aligned record stream.

    Records of a video must be contiguous in the stream; a video that
    reappears after another one started is a sequencing error.
    """

    def __init__(self, config: Config, strategy: Optional[FusionStrategy] = None):
        self.config = config
        self.strategy = strategy

    def run(self, pairs: Iterable[FramePair]) -> Iterator[VideoResult]:
        executor = ThreadPoolExecutor(max_workers=self.config.threads) if self.config.threads > 1 else None
        try:
            yield from self._run(pairs, executor)
        finally:
            if executor is not None:
                executor.shutdown(wait=True)

    def _run(self, pairs: Iterable[FramePair], executor: Optional[Executor]) -> Iterator[VideoResult]:
        seen: Set[str] = set()
        builder: Optional[VideoTubeBuilder] = None
        result: Optional[VideoResult] = None
        for appearance, flow in pairs:
            if builder is None or appearance.video_id != builder.state.video_id:
                if builder is not None:
                    yield self._finish(builder, result)
                if appearance.video_id in seen:
                    raise SequencingError(f"video {appearance.video_id!r} resumed after another video")
                seen.add(appearance.video_id)
                builder = VideoTubeBuilder(self.config, appearance.video_id, self.strategy, executor)
                result = VideoResult(video_id=appearance.video_id, record_count=0, segments=[])
            prediction = builder.process(appearance, flow)
            result.predictions.append((appearance.frame_index, prediction))
        if builder is not None:
            yield self._finish(builder, result)

    @staticmethod
    def _finish(builder: VideoTubeBuilder, result: VideoResult) -> VideoResult:
        result.record_count = builder.records_seen
        result.segments = builder.segments()
        logger.info(
            "video %s: %d frames, %d segments",
            result.video_id,
            result.record_count,
            len(result.segments),
        )
        return result


def replay_checkpoints(
    stream: Sequence[FrameDetections],
    checkpoints: Sequence[float],
    config: Optional[Config] = None,
    fusion: Optional[FusionStrategy] = None,
    flow: Optional[Sequence[FrameDetections]] = None,
) -> Dict[str, List[Snapshot]]:
    """Snapshots of every video after ceil(p * T) records, for each p."""
    config = config or Config()
    by_video: Dict[str, List[FramePair]] = {}
    for appearance, flow_record in align_streams(stream, flow):
        by_video.setdefault(appearance.video_id, []).append((appearance, flow_record))

    snapshots: Dict[str, List[Snapshot]] = {}
    for video_id, pairs in by_video.items():
        positions = checkpoint_positions(len(pairs), checkpoints)
        builder = VideoTubeBuilder(config, video_id, fusion)
        video_snapshots: List[Optional[Snapshot]] = [None] * len(positions)
        for count, (appearance, flow_record) in enumerate(pairs, start=1):
            builder.process(appearance, flow_record)
            for slot, (fraction, position) in enumerate(zip(checkpoints, positions)):
                if position == count:
                    video_snapshots[slot] = builder.snapshot(min(1.0, max(fraction, 1e-9)))
        snapshots[video_id] = video_snapshots  # type: ignore[assignment]
    return snapshots
