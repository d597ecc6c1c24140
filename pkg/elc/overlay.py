"""Annotated frame: detections in yellow, fitted curves in red, bounce as a blue cross.

Draw order is curves, verdict text, cross, then detections, so every detection centroid
stays yellow even where it falls on the cross or under the text.
"""

import logging
from typing import Optional, Tuple

import cv2
import numpy as np

from elc.bounce import AbscissaMode, BouncePrediction, QuadraticFit, x_at_frame
from elc.imaging import FrameImage
from elc.linecall import Verdict
from elc.tracker import Trajectory

logger = logging.getLogger(__name__)

YELLOW = (255, 255, 0)
RED = (255, 0, 0)
BLUE = (0, 0, 255)
WHITE = (255, 255, 255)
DOT_RADIUS = 2
CROSS_ARM = 6
SHIFT = 4
T_STEP = 0.25


def _curve_points(fit: QuadraticFit, traj: Trajectory, mode: AbscissaMode, height: int) -> np.ndarray:
    if mode is AbscissaMode.X:
        xs = traj.xs
        u = np.arange(np.floor(xs.min()), np.ceil(xs.max()) + 1.0, 1.0)
        x = u
    else:
        frames = traj.frames
        u = np.arange(frames.min(), frames.max() + T_STEP, T_STEP)
        x = np.array([x_at_frame(frames, traj.xs, f) for f in u])
    y = fit(u)
    keep = (y > -height) & (y < 2 * height)
    pts = np.stack([x[keep], y[keep]], axis=1) * (1 << SHIFT)
    return np.round(pts).astype(np.int32)


def draw_overlay(pixels: np.ndarray, traj: Trajectory, fits: Optional[Tuple[QuadraticFit, QuadraticFit]],
                 bounce: BouncePrediction, verdict: Verdict) -> np.ndarray:
    canvas = np.ascontiguousarray(pixels.copy())
    height = canvas.shape[0]

    if fits is not None:
        for fit in fits:
            pts = _curve_points(fit, traj, bounce.abscissa_mode, height)
            if len(pts) >= 2:
                cv2.polylines(canvas, [pts], False, RED, 1, cv2.LINE_AA, SHIFT)

    label = f"{verdict.call} {verdict.decisive_line} {verdict.margin:+.1f}px"
    if not verdict.confident:
        label += " (low confidence)"
    cv2.putText(canvas, label, (8, 18), cv2.FONT_HERSHEY_SIMPLEX, 0.5, WHITE, 1, cv2.LINE_AA)

    cx, cy = int(round(bounce.x)), int(round(bounce.y))
    cv2.line(canvas, (cx - CROSS_ARM, cy), (cx + CROSS_ARM, cy), BLUE, 1)
    cv2.line(canvas, (cx, cy - CROSS_ARM), (cx, cy + CROSS_ARM), BLUE, 1)

    for p in traj.points:
        cv2.circle(canvas, (int(round(p.x)), int(round(p.y))), DOT_RADIUS, YELLOW, -1)

    return canvas


def render_overlay(frame: FrameImage, traj: Trajectory, fits, bounce: BouncePrediction,
                   verdict: Verdict, out_path: str) -> str:
    canvas = draw_overlay(frame.pixels, traj, fits, bounce, verdict)
    if not cv2.imwrite(out_path, cv2.cvtColor(canvas, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Could not write overlay {out_path}")
    logger.info(f"Overlay written to {out_path}")
    return out_path
