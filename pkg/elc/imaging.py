"""Raster primitives: frame loading, colour conversion, morphology, connected components."""

import logging
import os
import re
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import cv2
import numpy as np

from elc.errors import (
    MissingDirectory,
    MissingFrames,
    MixedDimensions,
    UndecodableFrame,
)

logger = logging.getLogger(__name__)

DEFAULT_PATTERN = "frame_%06d.png"
DEFAULT_FPS = 240.0
MIN_SIDE = 16


@dataclass(frozen=True)
class FrameImage:
    """One decoded RGB frame. `pixels` is (height, width, 3) uint8."""

    pixels: np.ndarray
    frame_index: int
    timestamp: float

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError(f"Frame pixels must be HxWx3 uint8, got {self.pixels.shape} {self.pixels.dtype}")
        if self.width < MIN_SIDE or self.height < MIN_SIDE:
            raise ValueError(f"Frame must be at least {MIN_SIDE}x{MIN_SIDE}, got {self.width}x{self.height}")
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def from_array(cls, pixels: np.ndarray, frame_index: int = 0, fps: float = DEFAULT_FPS) -> "FrameImage":
        return cls(np.ascontiguousarray(pixels, dtype=np.uint8), frame_index, frame_index / fps)


@dataclass(frozen=True)
class BinaryMask:
    """Foreground mask, one bool per pixel, (height, width)."""

    bits: np.ndarray

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def as_uint8(self) -> np.ndarray:
        return self.bits.astype(np.uint8)

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True)
class Blob:
    area: int
    centroid: Tuple[float, float]
    bbox: Tuple[int, int, int, int]  # min_x, min_y, max_x, max_y inclusive
    label: int = 0


# ---------------------------------------------------------------------------
# Frame loading
# ---------------------------------------------------------------------------

def _pattern_regex(pattern: str) -> "re.Pattern":
    """Turns a printf-style template (frame_%06d.png) into a regex capturing the index.

    The same stem with a .ppm extension is accepted as well.
    """
    match = re.search(r"%0?(\d*)d", pattern)
    if match is None:
        raise ValueError(f"Frame pattern needs a %d placeholder: {pattern}")
    head = re.escape(pattern[:match.start()])
    tail = pattern[match.end():]
    # splitext() treats a bare ".png" tail as a hidden-file name, not an extension
    dot = tail.rfind(".")
    stem, ext = (tail[:dot], tail[dot:]) if dot >= 0 else (tail, "")
    exts = {ext.lower(), ".ppm"}
    ext_alt = "|".join(re.escape(e) for e in sorted(exts))
    return re.compile(f"^{head}(\\d+){re.escape(stem)}(?:{ext_alt})$", re.IGNORECASE)


def _decode(path: str) -> np.ndarray:
    # IMREAD_COLOR drops alpha and expands grey to three channels
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise UndecodableFrame(os.path.basename(path))
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def list_frame_files(directory: str, pattern: str = DEFAULT_PATTERN) -> List[Tuple[int, str]]:
    if not os.path.isdir(directory):
        raise MissingDirectory(f"Frames directory not found: {directory}")
    regex = _pattern_regex(pattern)
    found = {}
    for name in sorted(os.listdir(directory)):
        m = regex.match(name)
        if m:
            found.setdefault(int(m.group(1)), os.path.join(directory, name))
    return sorted(found.items())


def iter_frame_sequence(directory: str, pattern: str = DEFAULT_PATTERN,
                        fps: float = DEFAULT_FPS) -> Iterator[FrameImage]:
    files = list_frame_files(directory, pattern)
    if not files:
        raise MissingFrames(f"No files matching {pattern} in {directory}")

    shape = None
    for index, path in files:
        pixels = _decode(path)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise MixedDimensions(
                f"{os.path.basename(path)} is {pixels.shape[1]}x{pixels.shape[0]}, expected {shape[1]}x{shape[0]}"
            )
        yield FrameImage(pixels, index, index / fps)


def load_frame_sequence(directory: str, pattern: str = DEFAULT_PATTERN,
                        fps: float = DEFAULT_FPS) -> List[FrameImage]:
    frames = list(iter_frame_sequence(directory, pattern, fps))
    gaps = frame_gaps(frames)
    if gaps:
        logger.warning(f"Frame numbering has {len(gaps)} gap(s): {gaps[:5]}")
    logger.info(f"Loaded {len(frames)} frames from {directory} ({frames[0].width}x{frames[0].height})")
    return frames


def read_frame(directory: str, frame_index: int, pattern: str = DEFAULT_PATTERN,
               fps: float = DEFAULT_FPS) -> FrameImage:
    """Single frame whose index is closest to `frame_index` (earlier one on ties)."""
    files = list_frame_files(directory, pattern)
    if not files:
        raise MissingFrames(f"No files matching {pattern} in {directory}")
    index, path = min(files, key=lambda item: (abs(item[0] - frame_index), item[0]))
    return FrameImage(_decode(path), index, index / fps)


def frame_gaps(frames: List[FrameImage]) -> List[Tuple[int, int]]:
    """Missing index ranges as inclusive (first_missing, last_missing) pairs."""
    gaps = []
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_index - prev.frame_index > 1:
            gaps.append((prev.frame_index + 1, cur.frame_index - 1))
    return gaps


# ---------------------------------------------------------------------------
# Colour
# ---------------------------------------------------------------------------

def rgb_to_hsv_image(pixels: np.ndarray) -> np.ndarray:
    """(..., 3) uint8 RGB -> float32 HSV with h in degrees [0, 360), s and v in [0, 1]."""
    rgb = np.asarray(pixels, dtype=np.float32).reshape(-1, 1, 3) / np.float32(255.0)
    hsv = cv2.cvtColor(rgb, cv2.COLOR_RGB2HSV).reshape(np.shape(pixels))
    hsv[..., 0] = np.mod(hsv[..., 0], 360.0)
    return hsv


def rgb_to_hsv(r: int, g: int, b: int) -> Tuple[float, float, float]:
    for channel in (r, g, b):
        if not 0 <= channel <= 255:
            raise ValueError(f"Channel out of range 0..255: {channel}")
    h, s, v = rgb_to_hsv_image(np.array([r, g, b], dtype=np.uint8))
    if s == 0:
        h = 0.0
    return float(h), float(s), float(v)


# ---------------------------------------------------------------------------
# Morphology and components
# ---------------------------------------------------------------------------

def morph_open_dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Opening (erode, dilate) then one more dilation, square element of side 2r+1."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return BinaryMask(mask.bits.copy())
    kernel = np.ones((2 * radius + 1, 2 * radius + 1), dtype=np.uint8)
    opened = cv2.morphologyEx(mask.as_uint8(), cv2.MORPH_OPEN, kernel)
    grown = cv2.dilate(opened, kernel)
    return BinaryMask(grown.astype(bool))


def label_components(mask: BinaryMask) -> Tuple[np.ndarray, List[Blob]]:
    """8-connected labelling. Returns (labels raster, blobs ordered by label)."""
    count, labels, stats, centroids = cv2.connectedComponentsWithStats(
        mask.as_uint8(), connectivity=8, ltype=cv2.CV_32S
    )
    blobs = []
    for label in range(1, count):
        left, top, w, h, area = (int(v) for v in stats[label])
        cx, cy = centroids[label]
        blobs.append(Blob(
            area=area,
            centroid=(float(cx), float(cy)),
            bbox=(left, top, left + w - 1, top + h - 1),
            label=label,
        ))
    return labels, blobs


def connected_components(mask: BinaryMask) -> List[Blob]:
    return label_components(mask)[1]


def blank_frame(width: int, height: int, color: Optional[Tuple[int, int, int]] = None) -> np.ndarray:
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    if color is not None:
        pixels[:] = color
    return pixels
