"""End-to-end composition: frames -> detections -> trajectory -> bounce -> verdict.

Every stage logs its wall time. A run that cannot finish raises a StageFailure naming
the stage, so callers can tell a detector problem from an analysis problem.
"""

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from elc.bounce import BouncePrediction, predict_bounce
from elc.config import PipelineConfig
from elc.detector import DetectionLog, detect_sequence
from elc.errors import (
    AnalysisError,
    AnalysisFailed,
    ConfigError,
    DetectorFailed,
    InputError,
    StageFailure,
)
from elc.evaluation import (
    EvalReport,
    SampleAnnotation,
    SampleRecord,
    aggregate,
    failed_record,
    load_manifest,
    record_for,
    resolve_path,
)
from elc.imaging import FrameImage, blank_frame, iter_frame_sequence, read_frame
from elc.linecall import CourtLineSpec, Verdict, call, load_court
from elc.overlay import render_overlay
from elc.tracker import Trajectory, assemble, longest_trajectory, select_analysis_window

logger = logging.getLogger(__name__)

OVERLAY_BACKGROUND = (0, 0, 0)


@dataclass
class RunResult:
    sample_id: Optional[str]
    detections_count: int
    trajectory_length: int
    window: Trajectory
    bounce: BouncePrediction
    verdict: Verdict
    timings_ms: Dict[str, float] = field(default_factory=dict)
    frames_processed: Optional[int] = None

    @property
    def detect_fps(self) -> Optional[float]:
        elapsed = self.timings_ms.get("detect")
        if not self.frames_processed or not elapsed:
            return None
        return self.frames_processed / (elapsed / 1000.0)

    def to_record(self, include_timings: bool = False) -> dict:
        record = {
            "sample_id": self.sample_id,
            "detections": self.detections_count,
            "trajectory_length": self.trajectory_length,
            "window": {
                "first_frame": self.window.points[0].frame_index,
                "last_frame": self.window.points[-1].frame_index,
                "length": len(self.window),
            },
            "bounce": self.bounce.to_record(),
            "verdict": self.verdict.model_dump(mode="json"),
        }
        if include_timings:
            record["timings_ms"] = dict(self.timings_ms)
            if self.detect_fps is not None:
                record["detect_fps"] = self.detect_fps
        return record


@contextmanager
def _stage(name: str, timings: Dict[str, float]):
    logger.info(f"[{name}] start")
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = (time.perf_counter() - start) * 1000.0
        timings[name] = timings.get(name, 0.0) + elapsed
        logger.info(f"[{name}] done in {elapsed:.1f} ms")


def resolve_court(court: Optional[CourtLineSpec], cfg: PipelineConfig) -> CourtLineSpec:
    if court is not None:
        return court
    if cfg.court:
        return load_court(cfg.court)
    raise ConfigError("No court spec given (pass one or set `court` in the config)")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def detect_frames(frames_dir: str, cfg: PipelineConfig, timings: Optional[Dict[str, float]] = None) -> DetectionLog:
    timings = {} if timings is None else timings
    with _stage("detect", timings):
        frames = iter_frame_sequence(frames_dir, cfg.frame_pattern, cfg.fps)
        return detect_sequence(frames, cfg.detector, cfg.fps)


def analyze_trajectory(traj: Trajectory, cfg: PipelineConfig, court: CourtLineSpec, *,
                       sample_id: Optional[str] = None, detections_count: Optional[int] = None,
                       timings: Optional[Dict[str, float]] = None) -> RunResult:
    timings = {} if timings is None else timings
    with _stage("window", timings):
        try:
            window = select_analysis_window(traj, cfg.tracker)
        except AnalysisError as exc:
            raise AnalysisFailed(f"{type(exc).__name__}: {exc}") from exc
    with _stage("bounce", timings):
        bounce = predict_bounce(window, cfg.bounce)
    with _stage("call", timings):
        verdict = call(bounce, court)

    return RunResult(
        sample_id=sample_id,
        detections_count=len(traj) if detections_count is None else detections_count,
        trajectory_length=len(traj),
        window=window,
        bounce=bounce,
        verdict=verdict,
        timings_ms=timings,
    )


def analyze_detections(log: DetectionLog, cfg: PipelineConfig, court: CourtLineSpec, *,
                       sample_id: Optional[str] = None,
                       timings: Optional[Dict[str, float]] = None) -> RunResult:
    timings = {} if timings is None else timings
    with _stage("assemble", timings):
        tracks = assemble(log.detections, cfg.tracker, log.fps, (log.width, log.height))
        traj = longest_trajectory(tracks)
    if traj is None:
        raise DetectorFailed("no track")
    return analyze_trajectory(traj, cfg, court, sample_id=sample_id,
                              detections_count=len(log.found), timings=timings)


def write_overlay(result: RunResult, out_path: str, frames_dir: Optional[str] = None,
                  cfg: Optional[PipelineConfig] = None, frame_size: Optional[Tuple[int, int]] = None) -> str:
    """Overlay on the frame closest to the window's lowest point, or on a blank canvas."""
    window = result.window
    anchor_frame = window.points[window.lowest_index()].frame_index
    if frames_dir:
        cfg = cfg or PipelineConfig()
        frame = read_frame(frames_dir, anchor_frame, cfg.frame_pattern, cfg.fps)
    else:
        width, height = frame_size or window.frame_size or (1280, 720)
        frame = FrameImage.from_array(blank_frame(width, height, OVERLAY_BACKGROUND), anchor_frame, window.fps)
    fits = None
    if result.bounce.fit_d is not None and result.bounce.fit_a is not None:
        fits = (result.bounce.fit_d, result.bounce.fit_a)
    return render_overlay(frame, window, fits, result.bounce, result.verdict, out_path)


def run_pipeline(frames_dir: str, cfg: PipelineConfig, court: Optional[CourtLineSpec] = None, *,
                 sample_id: Optional[str] = None, overlay_path: Optional[str] = None) -> RunResult:
    court = resolve_court(court, cfg)
    timings: Dict[str, float] = {}
    log = detect_frames(frames_dir, cfg, timings)
    result = analyze_detections(log, cfg, court, sample_id=sample_id, timings=timings)
    result.frames_processed = len(log.frame_indices)
    if overlay_path:
        with _stage("overlay", timings):
            write_overlay(result, overlay_path, frames_dir, cfg)
    if result.detect_fps is not None:
        logger.info(f"Detection ran at {result.detect_fps:.1f} frames/s on {log.width}x{log.height}")
    logger.info(f"Run {sample_id or frames_dir}: {result.verdict.call} (margin {result.verdict.margin:+.2f}px)")
    return result


# ---------------------------------------------------------------------------
# Sources and evaluation
# ---------------------------------------------------------------------------

def load_source(path: str) -> Union[str, Trajectory, DetectionLog]:
    """A frames directory (returned as is), a trajectory file or a detections file."""
    if os.path.isdir(path):
        return path
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if "points" in data:
        return Trajectory.from_records(data)
    return DetectionLog.from_records(data)


def analyze_source(source: Union[str, Trajectory, DetectionLog], cfg: PipelineConfig, court: CourtLineSpec,
                   sample_id: Optional[str] = None) -> RunResult:
    if isinstance(source, Trajectory):
        return analyze_trajectory(source, cfg, court, sample_id=sample_id)
    if isinstance(source, DetectionLog):
        return analyze_detections(source, cfg, court, sample_id=sample_id)
    return run_pipeline(source, cfg, court, sample_id=sample_id)


def evaluate_sample(ann: SampleAnnotation, manifest_path: str, cfg: PipelineConfig) -> SampleRecord:
    try:
        court = load_court(resolve_path(manifest_path, ann.court))
        source = load_source(resolve_path(manifest_path, ann.source))
        result = analyze_source(source, cfg, court, sample_id=ann.id)
    except StageFailure as exc:
        logger.warning(f"Sample {ann.id} failed at {exc.stage}: {exc.reason}")
        return failed_record(ann, f"{exc.stage}: {exc.reason}")
    except (AnalysisError, InputError) as exc:
        logger.warning(f"Sample {ann.id} failed: {exc}")
        return failed_record(ann, f"{type(exc).__name__}: {exc}")
    except (OSError, ValueError) as exc:
        # unreadable or invalid court, detections or trajectory file
        logger.warning(f"Sample {ann.id} has unusable input: {exc}")
        return failed_record(ann, f"input: {type(exc).__name__}")
    return record_for(ann, result.bounce, result.verdict, cfg.eval)


def _evaluate_job(job: Tuple[SampleAnnotation, str, PipelineConfig]) -> SampleRecord:
    ann, manifest_path, cfg = job
    return evaluate_sample(ann, manifest_path, cfg)


def evaluate_manifest(manifest_path: str, cfg: PipelineConfig, workers: int = 1) -> EvalReport:
    samples = load_manifest(manifest_path)
    logger.info(f"Evaluating {len(samples)} samples from {manifest_path} with {workers} worker(s)")
    jobs = [(ann, manifest_path, cfg) for ann in samples]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records: List[SampleRecord] = list(pool.map(_evaluate_job, jobs))
    else:
        records = [_evaluate_job(job) for job in jobs]
    return aggregate(records)
