#!/usr/bin/env python3
"""
tubelink command line.

    tubelink build    --appearance a.jsonl [--flow f.jsonl --fusion union-set] --out out/
    tubelink eval     --gt gt.json [--tubes out/tubes.json] [--appearance a.jsonl] --out out/
    tubelink bench    [--appearance a.jsonl] --repetitions 3
    tubelink simulate --out data/ --seed 7 --classes 3

Exit codes: 0 success, 2 unreadable or malformed input / bad configuration,
3 frames out of order.
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tubelink import __version__
from tubelink.config import Config, load_config
from tubelink.core import FrameDetections
from tubelink.errors import ConfigError, DomainError, RecordError, SequencingError
from tubelink.formats import (
    read_detections,
    read_ground_truth,
    read_tubes,
    write_detections,
    write_ground_truth,
    write_tubes,
)
from tubelink.fusion import FusionStrategy
from tubelink.labeler import TubeSegment
from tubelink.metrics import (
    DEFAULT_CHECKPOINTS,
    DEFAULT_DELTAS,
    RANGE_DELTAS,
    MetricCurve,
    auc_at,
    map_at,
    map_avg_range,
    online_curves,
)
from tubelink.pipeline import (
    TubePipeline,
    VideoTubeBuilder,
    align_streams,
    checkpoint_positions,
)
from tubelink.simulator import NoiseSpec, ScenarioSpec, corrupt, generate_scenario

logger = logging.getLogger("tubelink")

FUSION_CHOICES = ("union-set", "boost", "none")


class PipelineRun(BaseModel):
    """Inputs, parameters and output location of one pipeline invocation."""

    model_config = ConfigDict(frozen=True)

    appearance: Path
    flow: Optional[Path] = None
    ground_truth: Optional[Path] = None
    config: Config = Field(default_factory=Config)
    fusion: Optional[FusionStrategy] = None
    out: Path = Path("out")
    checkpoints: Tuple[float, ...] = DEFAULT_CHECKPOINTS
    # free-form run label, e.g. RTF or AF when the inputs come from a flow-only detector
    tag: Optional[str] = Field(default=None, min_length=1, max_length=32, pattern=r"^[A-Za-z0-9+_.-]+$")

    @model_validator(mode="after")
    def _flow_iff_fusion(self) -> "PipelineRun":
        if self.fusion is not None and self.flow is None:
            raise ValueError(f"{self.fusion.variant} fusion needs a flow stream")
        if self.fusion is None and self.flow is not None:
            raise ValueError("a flow stream was given but fusion is 'none'")
        return self

    @property
    def mode(self) -> str:
        if self.tag is not None:
            return self.tag
        return "A" if self.fusion is None else "A+F"


def _metric_key(delta: float) -> str:
    return f"{delta:g}"


def _read_stream(path: Optional[Path], class_count: int) -> Optional[Iterable[FrameDetections]]:
    if path is None:
        return None
    if not path.exists():
        raise FileNotFoundError(f"detection file not found: {path}")
    return read_detections(path, class_count)


def cmd_build(run: PipelineRun) -> Dict[str, Any]:
    """Build tubes for every video and log the prediction at each checkpoint."""
    appearance = _read_stream(run.appearance, run.config.class_count)
    flow = _read_stream(run.flow, run.config.class_count)
    run.out.mkdir(parents=True, exist_ok=True)

    segments: List[TubeSegment] = []
    rows: List[Dict[str, Any]] = []
    videos = 0
    frames = 0
    for result in TubePipeline(run.config, run.fusion).run(align_streams(appearance, flow)):
        videos += 1
        frames += result.record_count
        segments.extend(result.segments)
        positions = checkpoint_positions(result.record_count, run.checkpoints)
        for fraction, position in zip(run.checkpoints, positions):
            frame_index, prediction = result.predictions[position - 1]
            rows.append(
                {
                    "mode": run.mode,
                    "video": result.video_id,
                    "checkpoint": fraction,
                    "records": position,
                    "frame": frame_index,
                    "predicted_class": None if prediction is None else prediction.class_id,
                    "tube": None if prediction is None else prediction.tube_id,
                    "score": None if prediction is None else prediction.score,
                }
            )

    write_tubes(segments, run.out / "tubes.json")
    predictions = pd.DataFrame(
        rows, columns=["mode", "video", "checkpoint", "records", "frame", "predicted_class", "tube", "score"]
    )
    predictions = predictions.astype({"predicted_class": "Int64", "tube": "Int64", "score": "float64"})
    predictions.to_csv(run.out / "predictions.csv", index=False, float_format="%.6f")
    return {"mode": run.mode, "videos": videos, "frames": frames, "segments": len(segments)}


def _round(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(float(value), 6)


def cmd_eval(
    tubes_path: Path,
    gt_path: Path,
    out: Path,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    checkpoints: Sequence[float] = DEFAULT_CHECKPOINTS,
    run: Optional[PipelineRun] = None,
    mode: Optional[str] = None,
) -> Dict[str, Any]:
    """Localisation metrics of built tubes, plus online curves when ``run`` is given.

    ``mode`` labels metrics.json; it defaults to the mode of ``run``.
    """
    if not gt_path.exists():
        raise FileNotFoundError(f"ground truth not found: {gt_path}")
    if not tubes_path.exists():
        raise FileNotFoundError(f"tubes not found: {tubes_path}")
    gts = read_ground_truth(gt_path)
    segments = read_tubes(tubes_path)

    gt_videos = {gt.video_id for gt in gts}
    stray = sorted({seg.video_id for seg in segments} - gt_videos)
    if stray:
        logger.warning("%d videos have tubes but no ground truth: %s", len(stray), ", ".join(stray[:5]))

    out.mkdir(parents=True, exist_ok=True)
    per_delta = {delta: map_at(segments, gts, delta) for delta in deltas}
    per_range = [map_at(segments, gts, delta) for delta in RANGE_DELTAS]
    metrics: Dict[str, Any] = {
        "map": {_metric_key(d): _round(result.mean_ap) for d, result in per_delta.items()},
        "auc": {_metric_key(d): _round(auc_at(segments, gts, d)) for d in deltas},
        "videos": len(gt_videos),
        "ground_truth_tubes": len(gts),
        "predicted_segments": len(segments),
    }
    metrics["map"]["0.5:0.95"] = _round(map_avg_range(segments, gts))
    if mode is None and run is not None:
        mode = run.mode
    if mode is not None:
        metrics["mode"] = mode

    classes = sorted({c for result in per_delta.values() for c in result.per_class})
    table = pd.DataFrame({"class": classes})
    for delta, result in per_delta.items():
        table[f"ap@{_metric_key(delta)}"] = [result.per_class.get(c) for c in classes]
    table["ap@0.5:0.95"] = [
        None
        if any(r.per_class.get(c) is None for r in per_range)
        else float(np.mean([r.per_class[c] for r in per_range]))
        for c in classes
    ]
    table.to_csv(out / "per_class_ap.csv", index=False, float_format="%.6f")

    if run is not None:
        stream = list(read_detections(run.appearance, run.config.class_count))
        flow = list(read_detections(run.flow, run.config.class_count)) if run.flow else None
        curves = online_curves(stream, gts, deltas, checkpoints, config=run.config, fusion=run.fusion, flow=flow)
        curves_frame(curves).to_csv(out / "curves.csv", index=False, float_format="%.6f")
        accuracy = curves[0]
        metrics["accuracy"] = {
            _metric_key(p): _round(v) for p, v in zip(accuracy.fractions, accuracy.values)
        }

    with open(out / "metrics.json", "w", encoding="utf-8", newline="\n") as handle:
        handle.write(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    return metrics


def curves_frame(curves: Sequence[MetricCurve]) -> pd.DataFrame:
    """One row per checkpoint, one column per curve."""
    frame = pd.DataFrame({"observed": list(curves[0].fractions)})
    for curve in curves:
        column = curve.kind if curve.delta is None else f"{curve.kind}@{_metric_key(curve.delta)}"
        frame[column] = list(curve.values)
    return frame


def bench_scenario(config: Config, seed: int, frame_count: int = 200) -> List[FrameDetections]:
    """Noisy synthetic stream with one instance per video and every class scored."""
    spec = ScenarioSpec(seed=seed, frame_count=frame_count, class_count=config.class_count)
    _, clean = generate_scenario(spec)
    noise = NoiseSpec(drop_prob=0.05, box_jitter=2.0, fp_rate=1.0, score_sd=0.05)
    return corrupt(clean, noise, seed=seed + 1)


def bench_stream(
    config: Config,
    stream: Sequence[FrameDetections],
    repetitions: int = 3,
    fusion: Optional[FusionStrategy] = None,
    flow: Optional[Sequence[FrameDetections]] = None,
) -> Dict[str, float]:
    """Time the linker + labeler per frame and the whole pipeline per stream.

    Input is fully in memory, so no file I/O is measured.
    """
    pairs = list(align_streams(stream, flow))
    executor = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None

    link_ms: List[float] = []
    total_seconds = 0.0
    try:
        for _ in range(max(1, repetitions)):
            builders: Dict[str, VideoTubeBuilder] = {}
            started = time.perf_counter()
            for appearance, flow_record in pairs:
                builder = builders.get(appearance.video_id)
                if builder is None:
                    builder = VideoTubeBuilder(config, appearance.video_id, fusion, executor)
                    builders[appearance.video_id] = builder
                candidates = builder.candidates(appearance, flow_record)
                tick = time.perf_counter()
                builder.advance(appearance, candidates)
                link_ms.append((time.perf_counter() - tick) * 1000.0)
                builder.prediction()
            for builder in builders.values():
                builder.segments()
            total_seconds += time.perf_counter() - started
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    timings = np.asarray(link_ms)
    return {
        "frames": float(len(pairs)),
        "repetitions": float(max(1, repetitions)),
        "mean_ms_per_frame": float(timings.mean()) if timings.size else 0.0,
        "p95_ms_per_frame": float(np.percentile(timings, 95)) if timings.size else 0.0,
        "fps": float(timings.size / total_seconds) if total_seconds > 0 else 0.0,
    }


def cmd_bench(run: PipelineRun, repetitions: int = 3) -> Dict[str, float]:
    """Latency report for the detection files of ``run``, loaded up front."""
    stream = list(_read_stream(run.appearance, run.config.class_count))
    flow = _read_stream(run.flow, run.config.class_count)
    return bench_stream(
        run.config, stream, repetitions, run.fusion, list(flow) if flow is not None else None
    )


def cmd_simulate(
    spec: ScenarioSpec, noise: NoiseSpec, out: Path, with_flow: bool = False
) -> Dict[str, int]:
    """Write appearance.jsonl, gt.json and optionally an independently corrupted flow.jsonl."""
    out.mkdir(parents=True, exist_ok=True)
    gts, clean = generate_scenario(spec)
    appearance = corrupt(clean, noise, seed=spec.seed + 1, class_count=spec.class_count)
    summary = {
        "ground_truth_tubes": write_ground_truth(gts, out / "gt.json"),
        "appearance_records": write_detections(appearance, out / "appearance.jsonl"),
    }
    if with_flow:
        flow = corrupt(clean, noise, seed=spec.seed + 2, class_count=spec.class_count)
        summary["flow_records"] = write_detections(flow, out / "flow.jsonl")
    return summary


# --- argument parsing -------------------------------------------------------


def _fractions(text: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated fractions, got {text!r}")
    if not values or any(not (0.0 < v <= 1.0) for v in values):
        raise argparse.ArgumentTypeError("checkpoints must be fractions in (0, 1]")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("checkpoints must be strictly increasing")
    return values


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("tube generation")
    group.add_argument("--lambda", dest="lambda_", type=float, help="linking IoU threshold (0.1)")
    group.add_argument("--n", type=int, help="boxes kept per class after NMS (10)")
    group.add_argument("--k", type=int, help="consecutive misses that end a tube (5)")
    group.add_argument("--alpha", type=float, help="label switch penalty (3.0)")
    group.add_argument("--nms-iou", dest="nms_iou", type=float, help="NMS overlap threshold (0.45)")
    group.add_argument("--classes", dest="class_count", type=int, help="number of action classes (24)")
    group.add_argument("--env-file", help="read defaults from this .env file")


def _add_input_flags(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument("--appearance", type=Path, required=required, help="appearance detections (JSONL)")
    parser.add_argument("--flow", type=Path, help="flow detections (JSONL)")
    parser.add_argument("--fusion", choices=FUSION_CHOICES, help="default: union-set with --flow, else none")
    parser.add_argument(
        "--checkpoints",
        type=_fractions,
        default=DEFAULT_CHECKPOINTS,
        help="observed fractions, comma separated (0.1,...,1.0)",
    )
    parser.add_argument(
        "--mode",
        help="run label written to the outputs (default: A, or A+F with fusion), e.g. RTF or AF",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tubelink", description="Online action tube generation and evaluation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build", help="build tubes and the prediction log")
    _add_input_flags(build, required=True)
    _add_config_flags(build)
    build.add_argument("--out", type=Path, default=Path("out"))
    build.set_defaults(func=_run_build)

    evaluate = sub.add_parser("eval", help="evaluate tubes against ground truth")
    evaluate.add_argument("--gt", type=Path, required=True, help="ground-truth tubes (JSON)")
    evaluate.add_argument("--tubes", type=Path, help="built tubes (default: OUT/tubes.json)")
    evaluate.add_argument("--delta", type=float, action="append", help="ST-IoU threshold (repeatable)")
    _add_input_flags(evaluate, required=False)
    _add_config_flags(evaluate)
    evaluate.add_argument("--out", type=Path, default=Path("out"))
    evaluate.set_defaults(func=_run_eval)

    bench = sub.add_parser("bench", help="measure tube generation latency")
    _add_input_flags(bench, required=False)
    _add_config_flags(bench)
    bench.add_argument("--repetitions", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0, help="synthetic stream seed when no input is given")
    bench.add_argument("--out", type=Path, help="also write bench.csv here")
    bench.set_defaults(func=_run_bench)

    simulate = sub.add_parser("simulate", help="write a synthetic scenario")
    simulate.add_argument("--out", type=Path, default=Path("data"))
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--classes", dest="class_count", type=int, default=3)
    simulate.add_argument("--frames", type=int, default=200)
    simulate.add_argument("--instances", type=int, default=1, help="co-occurring instances per video")
    simulate.add_argument("--videos", type=int, default=1, help="videos per class")
    simulate.add_argument("--drop", type=float, default=0.0, help="detection drop probability")
    simulate.add_argument("--jitter", type=float, default=0.0, help="box jitter (pixels, std)")
    simulate.add_argument("--fp-rate", type=float, default=0.0, help="false positives per frame")
    simulate.add_argument("--score-sd", type=float, default=0.0, help="score noise (std)")
    simulate.add_argument("--with-flow", action="store_true", help="also write flow.jsonl")
    simulate.set_defaults(func=_run_simulate)
    return parser


def _config_from(args: argparse.Namespace) -> Config:
    return load_config(
        getattr(args, "env_file", None),
        lambda_=args.lambda_,
        n=args.n,
        k=args.k,
        alpha=args.alpha,
        nms_iou=args.nms_iou,
        class_count=args.class_count,
    )


def _pipeline_run(args: argparse.Namespace, config: Config, out: Path) -> PipelineRun:
    fusion_flag = args.fusion or ("union-set" if args.flow else "none")
    fusion = None
    if fusion_flag != "none":
        fusion = FusionStrategy(variant=fusion_flag.replace("-", "_"), boost_iou_threshold=config.boost_iou)
    try:
        return PipelineRun(
            appearance=args.appearance,
            flow=args.flow,
            config=config,
            fusion=fusion,
            out=out,
            checkpoints=args.checkpoints,
            tag=args.mode,
        )
    except ValidationError as e:
        raise ConfigError(e.errors()[0]["msg"]) from e


def _run_build(args: argparse.Namespace) -> int:
    run = _pipeline_run(args, _config_from(args), args.out)
    print(f"🔍 Building tubes ({run.mode}) from {run.appearance}")
    summary = cmd_build(run)
    print(f"✅ {summary['videos']} videos, {summary['frames']} frames, {summary['segments']} tube segments")
    print(f"📁 Wrote {run.out / 'tubes.json'} and {run.out / 'predictions.csv'}")
    return 0


def _run_eval(args: argparse.Namespace) -> int:
    config = _config_from(args)
    run = _pipeline_run(args, config, args.out) if args.appearance else None
    deltas = tuple(args.delta) if args.delta else DEFAULT_DELTAS
    if any(not (0.0 < d <= 1.0) for d in deltas):
        raise ConfigError("--delta values must lie in (0, 1]")
    tubes = args.tubes or args.out / "tubes.json"
    metrics = cmd_eval(tubes, args.gt, args.out, deltas, args.checkpoints, run, args.mode)

    print(f"📊 Localisation results ({metrics['mode']})" if "mode" in metrics else "📊 Localisation results")
    for key, value in metrics["map"].items():
        print(f"   mAP@{key}: {value:.4f}")
    for key, value in metrics["auc"].items():
        print(f"   AUC@{key}: {value:.4f}")
    for key, value in metrics.get("accuracy", {}).items():
        print(f"   early prediction accuracy at {key}: {value:.4f}")
    print(f"📁 Wrote metrics to {args.out}")
    return 0


def _run_bench(args: argparse.Namespace) -> int:
    config = _config_from(args)
    if args.appearance:
        run = _pipeline_run(args, config, args.out or Path("out"))
        print(f"🔍 Benchmarking ({run.mode}) on {run.appearance}")
        report = cmd_bench(run, args.repetitions)
    else:
        print(f"🎲 Generating a synthetic stream ({config.class_count} classes, seed {args.seed})")
        report = bench_stream(config, bench_scenario(config, args.seed), args.repetitions)

    print("📊 Tube generation latency (linker + labeler)")
    print(f"   mean: {report['mean_ms_per_frame']:.3f} ms/frame")
    print(f"   p95:  {report['p95_ms_per_frame']:.3f} ms/frame")
    print(f"   end to end: {report['fps']:.1f} frames/s over {int(report['frames'])} frames")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([report]).to_csv(args.out / "bench.csv", index=False, float_format="%.6f")
    return 0


def _run_simulate(args: argparse.Namespace) -> int:
    try:
        spec = ScenarioSpec(
            seed=args.seed,
            frame_count=args.frames,
            class_count=args.class_count,
            instances_per_class=args.instances,
            videos_per_class=args.videos,
        )
        noise = NoiseSpec(
            drop_prob=args.drop,
            box_jitter=args.jitter,
            fp_rate=args.fp_rate,
            score_sd=args.score_sd,
            width=spec.width,
            height=spec.height,
        )
    except ValidationError as e:
        raise ConfigError(e.errors()[0]["msg"]) from e
    summary = cmd_simulate(spec, noise, args.out, args.with_flow)
    print(f"✅ Wrote {summary['ground_truth_tubes']} ground-truth tubes and "
          f"{summary['appearance_records']} frames to {args.out}")
    return 0


def configure_logging(verbose: bool = False) -> None:
    level = "DEBUG" if verbose else os.getenv("TUBELINK_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv(verbose=False)
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except SequencingError as e:
        print(f"❌ Frame order violation: {e}", file=sys.stderr)
        return 3
    except (RecordError, ConfigError, DomainError) as e:
        print(f"❌ Invalid input: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("\n⚠️ Interrupted by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
