"""Two-stage ball locator.

Stage one is a per-pixel Gaussian mixture background model that marks moving pixels.
Stage two cleans the mask, splits it into blobs and keeps those whose colour and size
look like a tennis ball; one of them is then picked as the ball for the frame.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Literal, Optional, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from elc.errors import DimensionMismatch
from elc.imaging import (
    BinaryMask,
    Blob,
    FrameImage,
    label_components,
    morph_open_dilate,
    rgb_to_hsv_image,
)

logger = logging.getLogger(__name__)

NEUTRAL_SCORE = 0.5


class DetectorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # colour / area gate
    hue_range: Tuple[float, float] = (25.0, 95.0)
    sat_min: float = 0.25
    val_min: float = 0.25
    area_range: Tuple[float, float] = (5e-6, 5e-4)
    morph_radius: int = 1
    gate_radius: float = 40.0
    warmup_frames: int = 30

    # background mixture
    backend: Literal["reference", "opencv"] = "reference"
    mixtures: int = 5
    alpha: float = 0.005
    bg_threshold: float = 0.7
    match_lambda: float = 2.5
    var_init: float = 15.0 ** 2
    var_min: float = 4.0

    @model_validator(mode="after")
    def _check_ranges(self):
        if not self.hue_range[0] < self.hue_range[1]:
            raise ValueError(f"hue_range must satisfy h_lo < h_hi, got {self.hue_range}")
        if not self.area_range[0] < self.area_range[1]:
            raise ValueError(f"area_range must satisfy A_min < A_max, got {self.area_range}")
        if self.warmup_frames < 1:
            raise ValueError("warmup_frames must be >= 1")
        if self.morph_radius < 0 or self.gate_radius <= 0:
            raise ValueError("morph_radius must be >= 0 and gate_radius > 0")
        if self.mixtures < 1 or not 0 < self.alpha <= 1:
            raise ValueError("mixtures must be >= 1 and alpha in (0, 1]")
        if self.var_min <= 0 or self.var_init < self.var_min:
            raise ValueError("variances must satisfy 0 < var_min <= var_init")
        return self

    def area_bounds(self, width: int, height: int) -> Tuple[float, float]:
        frame_area = float(width * height)
        return self.area_range[0] * frame_area, self.area_range[1] * frame_area


class BallDetection(BaseModel):
    model_config = ConfigDict(frozen=True)

    frame_index: int
    x: float
    y: float
    area: float
    score: float = NEUTRAL_SCORE

    @property
    def centroid(self) -> Tuple[float, float]:
        return self.x, self.y


# ---------------------------------------------------------------------------
# Stage one: background model
# ---------------------------------------------------------------------------

class BackgroundModel:
    """Per-pixel mixture of up to K colour Gaussians with one shared variance per mode.

    Modes are kept sorted by weight / sqrt(variance), so "first matching mode" means the
    most background-like one. Empty slots have weight 0 and never match.
    """

    def __init__(self, height: int, width: int, cfg: DetectorConfig):
        self.height = height
        self.width = width
        self.k = cfg.mixtures
        self.alpha = np.float32(cfg.alpha)
        self.bg_threshold = cfg.bg_threshold
        self.lambda_sq = np.float32(cfg.match_lambda ** 2)
        self.var_init = np.float32(cfg.var_init)
        self.var_min = np.float32(cfg.var_min)

        self.weights = np.zeros((height, width, self.k), dtype=np.float32)
        self.means = np.zeros((height, width, self.k, 3), dtype=np.float32)
        self.variances = np.full((height, width, self.k), self.var_init, dtype=np.float32)
        self.frames_seen = 0

    def apply(self, frame: FrameImage) -> BinaryMask:
        if (frame.height, frame.width) != (self.height, self.width):
            raise DimensionMismatch(
                f"Frame {frame.frame_index} is {frame.width}x{frame.height}, model is {self.width}x{self.height}"
            )
        alpha = self.alpha
        sample = frame.pixels.astype(np.float32)
        slots = np.arange(self.k)

        diff = sample[:, :, None, :] - self.means
        dist_sq = np.einsum("hwkc,hwkc->hwk", diff, diff)
        close = (self.weights > 0) & (dist_sq < self.lambda_sq * self.variances)
        matched = close.any(axis=2)
        first = close.argmax(axis=2)
        hit = (slots == first[..., None]) & matched[..., None]

        # matched mode: w += alpha * (1 - w); everything else decays by (1 - alpha)
        weights = self.weights * (1 - alpha) + alpha * hit
        means = self.means + alpha * diff * hit[..., None]
        variances = np.where(
            hit,
            np.maximum(self.variances + alpha * (dist_sq - self.variances), self.var_min),
            self.variances,
        )

        # no match: the weakest mode is replaced by the sample
        weakest = self.weights.argmin(axis=2)
        spawn = (slots == weakest[..., None]) & ~matched[..., None]
        weights = np.where(spawn, alpha, weights)
        means = np.where(spawn[..., None], sample[:, :, None, :], means)
        variances = np.where(spawn, self.var_init, variances)

        weights /= weights.sum(axis=2, keepdims=True)

        order = np.argsort(-(weights / np.sqrt(variances)), axis=2, kind="stable")
        self.weights = np.take_along_axis(weights, order, axis=2)
        self.means = np.take_along_axis(means, order[..., None], axis=2)
        self.variances = np.take_along_axis(variances, order, axis=2)

        # background = smallest prefix whose cumulative weight exceeds T
        in_background = (np.cumsum(self.weights, axis=2) - self.weights) <= self.bg_threshold
        rank = np.argmax(order == first[..., None], axis=2)
        matched_is_bg = np.take_along_axis(in_background, rank[..., None], axis=2)[..., 0]
        self.frames_seen += 1
        return BinaryMask(~matched | ~matched_is_bg)

    def mode_counts(self) -> np.ndarray:
        return np.count_nonzero(self.weights > 0, axis=2)


class OpenCvBackgroundModel:
    """OpenCV's adaptive mixture subtractor behind the same apply() interface."""

    def __init__(self, height: int, width: int, cfg: DetectorConfig):
        self.height = height
        self.width = width
        self.alpha = cfg.alpha
        self.subtractor = cv2.createBackgroundSubtractorMOG2(
            history=max(1, int(round(1.0 / cfg.alpha))),
            varThreshold=cfg.match_lambda ** 2,
            detectShadows=False,
        )
        self.subtractor.setNMixtures(cfg.mixtures)
        self.subtractor.setBackgroundRatio(cfg.bg_threshold)
        self.subtractor.setVarInit(cfg.var_init)
        self.subtractor.setVarMin(cfg.var_min)
        self.frames_seen = 0

    def apply(self, frame: FrameImage) -> BinaryMask:
        if (frame.height, frame.width) != (self.height, self.width):
            raise DimensionMismatch(
                f"Frame {frame.frame_index} is {frame.width}x{frame.height}, model is {self.width}x{self.height}"
            )
        bgr = cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2BGR)
        mask = self.subtractor.apply(bgr, learningRate=self.alpha)
        self.frames_seen += 1
        return BinaryMask(mask > 0)


def make_background_model(height: int, width: int, cfg: DetectorConfig):
    if cfg.backend == "opencv":
        return OpenCvBackgroundModel(height, width, cfg)
    return BackgroundModel(height, width, cfg)


def bg_update_and_classify(model, frame: FrameImage):
    """One step of the sequential fold: update the model in place and classify the frame."""
    mask = model.apply(frame)
    return model, mask


# ---------------------------------------------------------------------------
# Stage two: colour and area gate
# ---------------------------------------------------------------------------

def _blob_colours(frame: FrameImage, labels: np.ndarray, count: int) -> np.ndarray:
    """Mean (hue, sat, val) per label over labelled pixels. Hue is a saturation-weighted circular mean."""
    member = labels > 0
    ids = labels[member]
    hsv = rgb_to_hsv_image(frame.pixels[member]).astype(np.float64)
    hue = np.deg2rad(hsv[:, 0])
    sat = hsv[:, 1]

    n = np.bincount(ids, minlength=count).astype(np.float64)
    n[n == 0] = 1.0
    hue_x = np.bincount(ids, weights=sat * np.cos(hue), minlength=count)
    hue_y = np.bincount(ids, weights=sat * np.sin(hue), minlength=count)
    mean_hue = np.mod(np.rad2deg(np.arctan2(hue_y, hue_x)), 360.0)
    mean_sat = np.bincount(ids, weights=sat, minlength=count) / n
    mean_val = np.bincount(ids, weights=hsv[:, 2], minlength=count) / n
    return np.stack([mean_hue, mean_sat, mean_val], axis=1)


def color_area_filter(frame: FrameImage, mask: BinaryMask, cfg: DetectorConfig) -> List[Blob]:
    if (mask.height, mask.width) != (frame.height, frame.width):
        raise DimensionMismatch("Mask and frame dimensions differ")
    cleaned = morph_open_dilate(mask, cfg.morph_radius)
    labels, blobs = label_components(cleaned)
    if not blobs:
        return []

    a_lo, a_hi = cfg.area_bounds(frame.width, frame.height)
    # colour comes from the pixels the background model flagged, not the dilation ring
    colours = _blob_colours(frame, np.where(mask.bits, labels, 0), len(blobs) + 1)
    h_lo, h_hi = cfg.hue_range

    kept = []
    for blob in blobs:
        hue, sat, val = colours[blob.label]
        if not a_lo <= blob.area <= a_hi:
            continue
        if h_lo <= hue <= h_hi and sat >= cfg.sat_min and val >= cfg.val_min:
            kept.append(blob)
    return kept


def select_ball(blobs: List[Blob], predicted: Optional[Tuple[float, float]], cfg: DetectorConfig,
                frame_index: int = 0, frame_area: float = 0.0) -> Optional[BallDetection]:
    if not blobs:
        return None

    if predicted is not None:
        best, best_dist = None, math.inf
        for blob in blobs:
            dist = math.hypot(blob.centroid[0] - predicted[0], blob.centroid[1] - predicted[1])
            if dist <= cfg.gate_radius and dist < best_dist:
                best, best_dist = blob, dist
        if best is None:
            return None
        score = 1.0 - best_dist / cfg.gate_radius
    else:
        target = 0.5 * (cfg.area_range[0] + cfg.area_range[1]) * frame_area
        best = min(blobs, key=lambda b: abs(b.area - target))
        score = NEUTRAL_SCORE

    return BallDetection(
        frame_index=frame_index,
        x=best.centroid[0],
        y=best.centroid[1],
        area=float(best.area),
        score=score,
    )


# ---------------------------------------------------------------------------
# Whole-sequence detection
# ---------------------------------------------------------------------------

@dataclass
class DetectionLog:
    """Per-frame detections (None = miss), aligned with frame_indices."""

    fps: float
    width: int
    height: int
    frame_indices: List[int] = field(default_factory=list)
    detections: List[Optional[BallDetection]] = field(default_factory=list)

    @property
    def found(self) -> List[BallDetection]:
        return [d for d in self.detections if d is not None]

    def to_records(self) -> dict:
        records = []
        for index, det in zip(self.frame_indices, self.detections):
            if det is None:
                records.append({"frame_index": index, "miss": True})
            else:
                records.append(det.model_dump())
        return {"fps": self.fps, "width": self.width, "height": self.height, "detections": records}

    @classmethod
    def from_records(cls, data: dict) -> "DetectionLog":
        log = cls(fps=float(data["fps"]), width=int(data["width"]), height=int(data["height"]))
        for record in data["detections"]:
            log.frame_indices.append(int(record["frame_index"]))
            if record.get("miss"):
                log.detections.append(None)
            else:
                log.detections.append(BallDetection(**record))
        return log


def _predict_position(history: List[BallDetection], frame_index: int) -> Optional[Tuple[float, float]]:
    """Constant-velocity extrapolation from the two latest detections."""
    if len(history) < 2:
        return None
    prev, last = history[-2], history[-1]
    if frame_index - last.frame_index > 2:
        return None
    step = (frame_index - last.frame_index) / (last.frame_index - prev.frame_index)
    return last.x + (last.x - prev.x) * step, last.y + (last.y - prev.y) * step


def detect_sequence(frames: Iterable[FrameImage], cfg: DetectorConfig, fps: float) -> DetectionLog:
    model = None
    log = None
    history: List[BallDetection] = []

    for processed, frame in enumerate(frames):
        if model is None:
            model = make_background_model(frame.height, frame.width, cfg)
            log = DetectionLog(fps=fps, width=frame.width, height=frame.height)
        model, mask = bg_update_and_classify(model, frame)
        log.frame_indices.append(frame.frame_index)

        if processed < cfg.warmup_frames:
            log.detections.append(None)
            continue

        blobs = color_area_filter(frame, mask, cfg)
        predicted = _predict_position(history, frame.frame_index)
        det = select_ball(blobs, predicted, cfg, frame.frame_index, float(frame.width * frame.height))
        log.detections.append(det)
        if det is not None:
            history.append(det)
        logger.debug(f"frame {frame.frame_index}: fg={mask.count()} blobs={len(blobs)} ball={det is not None}")

    if log is None:
        raise ValueError("detect_sequence needs at least one frame")
    logger.info(f"Detected the ball in {len(log.found)}/{len(log.detections)} frames")
    return log
