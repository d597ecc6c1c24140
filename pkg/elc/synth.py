"""Synthetic rallies with closed-form bounce ground truth.

Image-space projectile motion: x(t) = x0 + vx*t, y(t) = y0 + vy*t + g*t^2/2 with y growing
downwards, a flat ground line at ground_y, restitution on the vertical speed and friction on
the horizontal one at each bounce.
"""

import json
import logging
import math
import os
from types import SimpleNamespace
from typing import List, Optional, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from elc.detector import BallDetection, DetectionLog
from elc.errors import NeverLands
from elc.imaging import DEFAULT_PATTERN, blank_frame
from elc.linecall import CourtLine, CourtLineSpec, call

logger = logging.getLogger(__name__)

OPTIC_YELLOW = (223, 255, 79)
COURT_BLUE = (40, 90, 160)
LINE_WHITE = (245, 245, 245)
CONFUSING_MARGIN = 3.0
MAX_BOUNCES = 50
SUBPIXEL_BITS = 4


class SynthParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p0: Tuple[float, float] = (100.0, 500.0)
    v0: Tuple[float, float] = (200.0, 300.0)
    g: float = Field(1000.0, gt=0)
    restitution: float = Field(0.7, gt=0, le=1)
    friction: float = Field(0.9, gt=0, le=1)
    ground_y: float = 700.0
    fps: float = Field(240.0, gt=0)
    n_frames: int = Field(240, ge=1)
    noise_sigma: float = Field(0.0, ge=0)
    dropout_p: float = Field(0.0, ge=0, le=1)
    ball_radius: float = Field(4.0, gt=0)
    seed: int = 0
    width: int = Field(1280, ge=16)
    height: int = Field(720, ge=16)

    @model_validator(mode="after")
    def _starts_above_ground(self):
        if self.p0[1] > self.ground_y:
            raise ValueError(f"Ball starts below the ground line ({self.p0[1]} > {self.ground_y})")
        return self


class GroundTruth(BaseModel):
    bounce_point: Tuple[float, float]
    bounce_time: float
    bounce_frame: float
    frame_offset: int = 0
    true_call: Optional[str] = None
    true_margin: Optional[float] = None
    tag: Optional[str] = None

    @property
    def x(self) -> float:
        return self.bounce_point[0]

    @property
    def y(self) -> float:
        return self.bounce_point[1]


def landing_time(y0: float, vy: float, g: float, ground_y: float) -> float:
    """Time until y(t) = ground_y, closed form (positive root)."""
    disc = vy * vy + 2.0 * g * (ground_y - y0)
    if disc < 0:
        return math.inf
    return (-vy + math.sqrt(disc)) / g


def post_bounce_velocity(vx: float, vy_impact: float, restitution: float, friction: float) -> Tuple[float, float]:
    return friction * vx, -restitution * vy_impact


def _segments(params: SynthParams, t_end: float) -> List[Tuple[float, float, float, float, float]]:
    """Flight segments (t_start, x, y, vx, vy) up to t_end."""
    t, (x, y), (vx, vy) = 0.0, params.p0, params.v0
    segments = [(t, x, y, vx, vy)]
    for _ in range(MAX_BOUNCES):
        dt = landing_time(y, vy, params.g, params.ground_y)
        if not math.isfinite(dt) or dt <= 0 or t + dt > t_end:
            break
        vy_impact = vy + params.g * dt
        t, x, y = t + dt, x + vx * dt, params.ground_y
        vx, vy = post_bounce_velocity(vx, vy_impact, params.restitution, params.friction)
        segments.append((t, x, y, vx, vy))
    return segments


def ideal_positions(params: SynthParams) -> np.ndarray:
    """(n_frames, 2) ideal ball centres sampled at k / fps."""
    times = np.arange(params.n_frames, dtype=np.float64) / params.fps
    segments = _segments(params, times[-1])
    starts = np.array([s[0] for s in segments])
    which = np.searchsorted(starts, times, side="right") - 1

    out = np.empty((params.n_frames, 2))
    for i, t in enumerate(times):
        t0, x, y, vx, vy = segments[which[i]]
        dt = t - t0
        out[i, 0] = x + vx * dt
        out[i, 1] = min(y + vy * dt + 0.5 * params.g * dt * dt, params.ground_y)
    return out


def generate_trajectory(params: SynthParams) -> Tuple[np.ndarray, List[BallDetection], GroundTruth]:
    x0, y0 = params.p0
    vx, vy = params.v0
    t_b = landing_time(y0, vy, params.g, params.ground_y)
    if not math.isfinite(t_b) or t_b > (params.n_frames - 1) / params.fps:
        raise NeverLands(f"Ball does not reach ground_y={params.ground_y} within {params.n_frames} frames")

    truth = GroundTruth(
        bounce_point=(x0 + vx * t_b, params.ground_y),
        bounce_time=t_b,
        bounce_frame=t_b * params.fps,
    )
    ideal = ideal_positions(params)

    # both draws always happen so the ideal path never depends on noise settings
    rng = np.random.default_rng(params.seed)
    noise = rng.standard_normal(ideal.shape) * params.noise_sigma
    dropped = rng.random(params.n_frames) < params.dropout_p

    area = math.pi * params.ball_radius ** 2
    observed = [
        BallDetection(frame_index=k, x=float(ideal[k, 0] + noise[k, 0]),
                      y=float(ideal[k, 1] + noise[k, 1]), area=area, score=1.0)
        for k in range(params.n_frames)
        if not dropped[k]
    ]
    return ideal, observed, truth


def label_truth(truth: GroundTruth, court: CourtLineSpec) -> GroundTruth:
    verdict = call(SimpleNamespace(x=truth.x, y=truth.y, confident=True), court)
    tag = "confusing" if abs(verdict.margin) <= CONFUSING_MARGIN else "normal"
    return truth.model_copy(update={"true_call": verdict.call, "true_margin": verdict.margin, "tag": tag})


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _fixed(value: float) -> int:
    return int(round(value * (1 << SUBPIXEL_BITS)))


def draw_court(pixels: np.ndarray, court: CourtLineSpec) -> None:
    for line in court.lines:
        thickness = max(1, int(round(line.thickness)))
        cv2.line(pixels, (_fixed(line.p0[0]), _fixed(line.p0[1])), (_fixed(line.p1[0]), _fixed(line.p1[1])),
                 LINE_WHITE, thickness, cv2.LINE_AA, SUBPIXEL_BITS)


def draw_ball(pixels: np.ndarray, x: float, y: float, radius: float) -> None:
    cv2.circle(pixels, (_fixed(x), _fixed(y)), _fixed(radius), OPTIC_YELLOW, -1, cv2.LINE_AA, SUBPIXEL_BITS)


def _write_png(path: str, pixels: np.ndarray) -> None:
    if not cv2.imwrite(path, cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Could not write frame {path}")


def write_json(path: str, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def render_frames(params: SynthParams, background: Tuple[int, int, int], out_dir: str,
                  lead_in: int = 0, court: Optional[CourtLineSpec] = None,
                  pattern: str = DEFAULT_PATTERN) -> Tuple[List[str], GroundTruth]:
    """One PNG per frame, preceded by `lead_in` empty-court frames, plus ground_truth.json."""
    _, observed, truth = generate_trajectory(params)
    if court is not None:
        truth = label_truth(truth, court)
    truth = truth.model_copy(update={"frame_offset": lead_in})

    os.makedirs(out_dir, exist_ok=True)
    canvas = blank_frame(params.width, params.height, background)
    if court is not None:
        draw_court(canvas, court)

    by_frame = {det.frame_index: det for det in observed}
    paths = []
    for k in range(lead_in + params.n_frames):
        pixels = canvas.copy()
        det = by_frame.get(k - lead_in)
        if det is not None:
            draw_ball(pixels, det.x, det.y, params.ball_radius)
        path = os.path.join(out_dir, pattern % k)
        _write_png(path, pixels)
        paths.append(path)

    write_json(os.path.join(out_dir, "ground_truth.json"), truth.model_dump(mode="json"))
    logger.info(f"Rendered {len(paths)} frames to {out_dir}")
    return paths, truth


def observed_log(params: SynthParams, observed: List[BallDetection]) -> DetectionLog:
    """Observations as a detections file, misses included, for the analyze path."""
    by_frame = {det.frame_index: det for det in observed}
    log = DetectionLog(fps=params.fps, width=params.width, height=params.height)
    for k in range(params.n_frames):
        log.frame_indices.append(k)
        log.detections.append(by_frame.get(k))
    return log


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def default_court(width: int, height: int, ground_y: float, thickness: float = 4.0) -> CourtLineSpec:
    """A vertical sideline at mid-frame (in-bounds to its left) and a far baseline."""
    side_x = 0.5 * width
    base_y = ground_y + 0.2 * height
    return CourtLineSpec(lines=[
        CourtLine(name="sideline", p0=(side_x, 0.0), p1=(side_x, float(height)), thickness=thickness, in_side=1),
        CourtLine(name="baseline", p0=(0.0, base_y), p1=(float(width), base_y), thickness=thickness, in_side=-1),
    ])


def sample_rally(rng: np.random.Generator, court: CourtLineSpec, confusing: bool, *, width: int, height: int,
                 ground_y: float, fps: float = 240.0, noise_sigma: float = 1.0, dropout_p: float = 0.05,
                 ball_radius: float = 3.0, seed: int = 0) -> SynthParams:
    """Back-solves a rally whose first bounce lands at a drawn signed margin from the sideline."""
    sideline = next(line for line in court.lines if line.name == "sideline")
    margin = rng.uniform(1.0, CONFUSING_MARGIN) if confusing else rng.uniform(8.0, 0.2 * width)
    sign = rng.choice([-1.0, 1.0])
    x_b = sideline.p0[0] + sideline.thickness / 2.0 - sign * margin

    # per-frame units, converted to per-second below
    speed_x = rng.uniform(2.0, 3.5) * rng.choice([-1.0, 1.0])
    speed_impact = rng.uniform(3.0, 5.0)
    g = rng.uniform(0.03, 0.05)
    t_b = int(rng.integers(25, 40)) + rng.uniform(0.05, 0.95)

    vy0 = speed_impact - g * t_b
    y0 = ground_y - (vy0 * t_b + 0.5 * g * t_b * t_b)
    x0 = x_b - speed_x * t_b
    return SynthParams(
        p0=(x0, y0),
        v0=(speed_x * fps, vy0 * fps),
        g=g * fps * fps,
        restitution=rng.uniform(0.6, 0.8),
        friction=rng.uniform(0.85, 1.0),
        ground_y=ground_y,
        fps=fps,
        n_frames=int(math.ceil(t_b)) + 22,
        noise_sigma=noise_sigma,
        dropout_p=dropout_p,
        ball_radius=ball_radius,
        seed=seed,
        width=width,
        height=height,
    )


def detector_overrides(params: SynthParams) -> dict:
    """Area gate sized for the rendered ball, as fractions of the frame area."""
    frame_area = float(params.width * params.height)
    r = params.ball_radius
    return {"area_range": [0.25 * math.pi * r * r / frame_area, 4.0 * math.pi * (r + 2) ** 2 / frame_area]}


def generate_dataset(out_dir: str, count: int, base_seed: int = 0, confusing_fraction: float = 0.05, *,
                     width: int = 320, height: int = 240, noise_sigma: float = 1.0, dropout_p: float = 0.05,
                     ball_radius: float = 3.0, render: bool = True, lead_in: int = 30) -> str:
    """Writes one directory per rally plus manifest.json and pipeline_config.json; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    ground_y = round(0.75 * height)
    court = default_court(width, height, ground_y)
    stride = max(1, int(round(1.0 / confusing_fraction))) if confusing_fraction > 0 else 0

    manifest = []
    params = None
    for i in range(count):
        seed = base_seed + i
        rng = np.random.default_rng(seed)
        confusing = bool(stride) and i % stride == stride - 1
        params = sample_rally(rng, court, confusing, width=width, height=height, ground_y=ground_y,
                              noise_sigma=noise_sigma, dropout_p=dropout_p, ball_radius=ball_radius, seed=seed)
        sample_id = f"rally_{seed:05d}"
        sample_dir = os.path.join(out_dir, sample_id)
        os.makedirs(sample_dir, exist_ok=True)
        write_json(os.path.join(sample_dir, "court.json"), court.model_dump(mode="json"))
        write_json(os.path.join(sample_dir, "params.json"), params.model_dump(mode="json"))

        if render:
            _, truth = render_frames(params, COURT_BLUE, os.path.join(sample_dir, "frames"), lead_in, court)
            source = f"{sample_id}/frames"
        else:
            _, observed, truth = generate_trajectory(params)
            truth = label_truth(truth, court)
            write_json(os.path.join(sample_dir, "detections.json"), observed_log(params, observed).to_records())
            write_json(os.path.join(sample_dir, "ground_truth.json"), truth.model_dump(mode="json"))
            source = f"{sample_id}/detections.json"

        manifest.append({
            "id": sample_id,
            "source": source,
            "court": f"{sample_id}/court.json",
            "gt_call": truth.true_call,
            "gt_bounce": list(truth.bounce_point),
            "tag": truth.tag,
        })

    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    config = {"fps": 240.0, "detector": detector_overrides(params) if params else {}}
    write_json(os.path.join(out_dir, "pipeline_config.json"), config)
    logger.info(f"Generated {count} synthetic rallies in {out_dir}")
    return os.path.join(out_dir, "manifest.json")
