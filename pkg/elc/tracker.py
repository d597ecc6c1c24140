"""Trajectory assembly and analysis-window selection."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt

from elc.detector import BallDetection
from elc.errors import TooShort

logger = logging.getLogger(__name__)


class TrackerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_gap: PositiveInt = 5
    min_track_len: PositiveInt = 8
    window_before: PositiveInt = 10
    window_after: PositiveInt = 10


@dataclass(frozen=True)
class Trajectory:
    points: Tuple[BallDetection, ...]
    fps: float
    frame_size: Optional[Tuple[int, int]] = None  # width, height

    def __post_init__(self):
        if not self.points:
            raise ValueError("Trajectory needs at least one point")
        frames = [p.frame_index for p in self.points]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("Trajectory frame indices must be strictly increasing")

    def __len__(self):
        return len(self.points)

    @property
    def frames(self) -> np.ndarray:
        return np.array([p.frame_index for p in self.points], dtype=np.float64)

    @property
    def xs(self) -> np.ndarray:
        return np.array([p.x for p in self.points], dtype=np.float64)

    @property
    def ys(self) -> np.ndarray:
        return np.array([p.y for p in self.points], dtype=np.float64)

    def lowest_index(self) -> int:
        """Index of the global image-y maximum (first one on ties)."""
        return int(np.argmax(self.ys))

    def with_points(self, points: Sequence[BallDetection]) -> "Trajectory":
        return Trajectory(tuple(points), self.fps, self.frame_size)

    def translated(self, dx: float, dy: float) -> "Trajectory":
        return self.with_points([p.model_copy(update={"x": p.x + dx, "y": p.y + dy}) for p in self.points])

    def to_records(self) -> dict:
        return {
            "fps": self.fps,
            "frame_size": list(self.frame_size) if self.frame_size else None,
            "points": [p.model_dump() for p in self.points],
        }

    @classmethod
    def from_records(cls, data: dict) -> "Trajectory":
        size = data.get("frame_size")
        return cls(
            points=tuple(BallDetection(**p) for p in data["points"]),
            fps=float(data["fps"]),
            frame_size=tuple(size) if size else None,
        )


def assemble(detections: Sequence[Optional[BallDetection]], cfg: TrackerConfig, fps: float = 240.0,
             frame_size: Optional[Tuple[int, int]] = None) -> List[Trajectory]:
    """Joins detections into tracks, splitting where more than max_gap frames are missing."""
    tracks: List[List[BallDetection]] = []
    current: List[BallDetection] = []
    for det in detections:
        if det is None:
            continue
        if current and det.frame_index - current[-1].frame_index - 1 > cfg.max_gap:
            tracks.append(current)
            current = []
        current.append(det)
    if current:
        tracks.append(current)

    kept = [Trajectory(tuple(t), fps, frame_size) for t in tracks if len(t) >= cfg.min_track_len]
    logger.info(f"Assembled {len(tracks)} track(s), {len(kept)} long enough (>= {cfg.min_track_len})")
    return kept


def longest_trajectory(trajectories: Sequence[Trajectory]) -> Optional[Trajectory]:
    if not trajectories:
        return None
    # max() keeps the first of equal lengths, i.e. the earliest track
    return max(trajectories, key=len)


def select_analysis_window(traj: Trajectory, cfg: TrackerConfig) -> Trajectory:
    if len(traj) < cfg.min_track_len:
        raise TooShort(f"Trajectory has {len(traj)} points, need {cfg.min_track_len}")
    anchor = traj.lowest_index()
    start = max(0, anchor - cfg.window_before)
    stop = min(len(traj), anchor + cfg.window_after + 1)
    return traj.with_points(traj.points[start:stop])
