"""
Readers and writers for the on-disk formats.

Detections are JSON Lines, one frame of one video per line:

    {"video": "v1", "frame": 0, "boxes": [{"box": [x1, y1, x2, y2], "scores": [...]}]}

Tubes and ground truth share one JSON array format:

    [{"video", "class", "tube", "segment": {"start", "end"}, "score",
      "boxes": [{"frame", "box", "score"}]}]

Every float is rounded to 6 decimals and keys are sorted, so writing the same
values twice gives byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

from pydantic import ValidationError

from tubelink.core import BoundingBox, Detection, FrameDetections, TubeBox
from tubelink.errors import RecordError, SequencingError
from tubelink.labeler import TubeSegment
from tubelink.metrics import GroundTruthTube

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
DECIMALS = 6


def _round(value: float) -> float:
    return round(float(value), DECIMALS)


def _round_box(box: BoundingBox) -> List[float]:
    return [_round(v) for v in box.as_list()]


def _dumps(payload: Any, indent: Optional[int] = None) -> str:
    return json.dumps(payload, sort_keys=True, indent=indent, ensure_ascii=False)


def _parse_record(raw: str, line: int, class_count: Optional[int]) -> FrameDetections:
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as e:
        raise RecordError(f"invalid JSON: {e.msg}", line) from e
    if not isinstance(payload, dict):
        raise RecordError("record must be a JSON object", line)
    missing = [key for key in ("video", "frame", "boxes") if key not in payload]
    if missing:
        raise RecordError(f"record lacks {', '.join(missing)}", line)
    if not isinstance(payload["boxes"], list):
        raise RecordError("'boxes' must be a list", line)
    if not isinstance(payload["video"], str):
        raise RecordError(f"'video' must be a string, got {type(payload['video']).__name__}", line)

    try:
        detections = []
        for entry in payload["boxes"]:
            detection = Detection.of(entry["box"], entry["scores"])
            if class_count is not None and detection.class_count != class_count:
                raise RecordError(
                    f"box has {detection.class_count} class scores, expected {class_count}", line
                )
            detections.append(detection)
        return FrameDetections(
            video_id=payload["video"],
            frame_index=payload["frame"],
            detections=tuple(detections),
        )
    except ValidationError as e:
        raise RecordError(_first_error(e), line) from e
    except (KeyError, TypeError, ValueError) as e:
        raise RecordError(f"malformed box entry: {e}", line) from e


def _first_error(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    return f"{location}: {first.get('msg')}" if location else str(first.get("msg"))


def iter_detections(
    handle: Iterable[str], class_count: Optional[int] = None
) -> Iterator[FrameDetections]:
    """Parse detection records one line at a time.

    Blank lines are skipped. Frame indices must strictly increase within
    each video, otherwise SequencingError is raised with the line number.
    """
    last_frame: Dict[str, int] = {}
    for line_no, raw in enumerate(handle, start=1):
        if not raw.strip():
            continue
        record = _parse_record(raw, line_no, class_count)
        previous = last_frame.get(record.video_id)
        if previous is not None and record.frame_index <= previous:
            raise SequencingError(
                f"video {record.video_id!r}: frame {record.frame_index} after frame {previous}",
                line_no,
            )
        last_frame[record.video_id] = record.frame_index
        yield record


def read_detections(path: PathLike, class_count: Optional[int] = None) -> Iterator[FrameDetections]:
    """Stream FrameDetections from a JSONL file without reading ahead."""
    with open(path, "r", encoding="utf-8") as handle:
        yield from iter_detections(handle, class_count)


def detection_line(record: FrameDetections) -> str:
    payload = {
        "video": record.video_id,
        "frame": record.frame_index,
        "boxes": [
            {"box": _round_box(det.box), "scores": [_round(s) for s in det.scores.scores]}
            for det in record.detections
        ],
    }
    return _dumps(payload)


def write_detections(records: Iterable[FrameDetections], path: PathLike) -> int:
    """Write records as JSONL; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(detection_line(record) + "\n")
            count += 1
    return count


def _tube_payload(
    video_id: str, class_id: int, tube_id: int, start: int, end: int, score: float, boxes: List[dict]
) -> Dict[str, Any]:
    return {
        "video": video_id,
        "class": class_id,
        "tube": tube_id,
        "segment": {"start": start, "end": end},
        "score": _round(score),
        "boxes": boxes,
    }


def segment_payload(segment: TubeSegment) -> Dict[str, Any]:
    boxes = [
        {"frame": tb.frame_index, "box": _round_box(tb.box), "score": _round(tb.score)}
        for tb in segment.boxes
    ]
    return _tube_payload(
        segment.video_id,
        segment.class_id,
        segment.tube_id,
        segment.start,
        segment.end,
        segment.score,
        boxes,
    )


def _write_json(payload: Any, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(_dumps(payload, indent=2) + "\n")


def write_tubes(segments: Iterable[TubeSegment], path: PathLike) -> int:
    payload = [segment_payload(segment) for segment in segments]
    _write_json(payload, path)
    return len(payload)


def _load_array(path: PathLike) -> List[Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as e:
        raise RecordError(f"{path}: invalid JSON: {e.msg}", e.lineno) from e
    if not isinstance(payload, list):
        raise RecordError(f"{path}: expected a JSON array of tubes")
    return payload


def read_tubes(path: PathLike) -> List[TubeSegment]:
    segments: List[TubeSegment] = []
    for index, entry in enumerate(_load_array(path)):
        try:
            segments.append(
                TubeSegment(
                    video_id=entry["video"],
                    class_id=entry["class"],
                    tube_id=entry.get("tube", index),
                    start=entry["segment"]["start"],
                    end=entry["segment"]["end"],
                    score=entry["score"],
                    boxes=tuple(
                        TubeBox(
                            frame_index=b["frame"],
                            box=BoundingBox.from_list(b["box"]),
                            score=b["score"],
                        )
                        for b in entry["boxes"]
                    ),
                )
            )
        except ValidationError as e:
            raise RecordError(f"{path}: tube {index}: {_first_error(e)}") from e
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise RecordError(f"{path}: tube {index} is malformed: {e}") from e
    return segments


def write_ground_truth(gts: Iterable[GroundTruthTube], path: PathLike) -> int:
    payload = []
    for index, gt in enumerate(gts):
        boxes = [
            {"frame": frame, "box": _round_box(box), "score": 1.0}
            for frame, box in sorted(gt.frame_boxes().items())
        ]
        payload.append(_tube_payload(gt.video_id, gt.class_id, index, gt.start, gt.end, 1.0, boxes))
    _write_json(payload, path)
    return len(payload)


def read_ground_truth(path: PathLike) -> List[GroundTruthTube]:
    """Load annotated tubes; their boxes must cover consecutive frames."""
    gts: List[GroundTruthTube] = []
    for index, entry in enumerate(_load_array(path)):
        try:
            frames = [b["frame"] for b in entry["boxes"]]
            if not frames:
                raise RecordError(f"{path}: ground-truth tube {index} has no boxes")
            if frames != list(range(frames[0], frames[0] + len(frames))):
                raise RecordError(f"{path}: ground-truth tube {index} skips frames")
            gts.append(
                GroundTruthTube(
                    video_id=entry["video"],
                    class_id=entry["class"],
                    start=frames[0],
                    boxes=tuple(BoundingBox.from_list(b["box"]) for b in entry["boxes"]),
                )
            )
        except ValidationError as e:
            raise RecordError(f"{path}: ground-truth tube {index}: {_first_error(e)}") from e
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise RecordError(f"{path}: ground-truth tube {index} is malformed: {e}") from e
    logger.debug("loaded %d ground-truth tubes from %s", len(gts), path)
    return gts
