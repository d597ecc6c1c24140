"""Video -> numbered PNG frames via the ffmpeg binary, so the pipeline only ever reads stills."""

import logging
import os
import shutil
import subprocess
from typing import List, Optional

from elc.errors import FrameExtractionError
from elc.imaging import DEFAULT_PATTERN, list_frame_files

logger = logging.getLogger(__name__)

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def find_ffmpeg() -> str:
    """imageio-ffmpeg's bundled binary, then ./ffmpeg/ffmpeg from build.sh, then PATH."""
    ffmpeg_binary = None
    try:
        import imageio_ffmpeg
        ffmpeg_binary = imageio_ffmpeg.get_ffmpeg_exe()
        logger.debug(f"imageio-ffmpeg binary: {ffmpeg_binary}")
    except Exception as e:
        logger.warning(f"Could not find ffmpeg via imageio-ffmpeg: {e}")

    local_build = os.path.join(PROJECT_ROOT, "ffmpeg", "ffmpeg")
    if not ffmpeg_binary and os.path.exists(local_build):
        ffmpeg_binary = local_build

    if not ffmpeg_binary:
        ffmpeg_binary = shutil.which("ffmpeg")
    if not ffmpeg_binary:
        raise FrameExtractionError("ffmpeg not found (install imageio-ffmpeg or put ffmpeg on PATH)")
    return ffmpeg_binary


def build_command(ffmpeg_binary: str, video_path: str, out_dir: str, fps: Optional[float] = None,
                  pattern: str = DEFAULT_PATTERN) -> List[str]:
    cmd = [ffmpeg_binary, "-hide_banner", "-loglevel", "error", "-y", "-i", video_path]
    if fps:
        cmd.extend(["-vf", f"fps={fps:g}"])
    cmd.extend(["-start_number", "0", os.path.join(out_dir, pattern)])
    return cmd


def extract_frames(video_path: str, out_dir: str, fps: Optional[float] = None,
                   pattern: str = DEFAULT_PATTERN) -> int:
    """Writes one image per frame into out_dir; returns how many frames landed there."""
    if not os.path.isfile(video_path):
        raise FrameExtractionError(f"Video not found: {video_path}")
    os.makedirs(out_dir, exist_ok=True)

    cmd = build_command(find_ffmpeg(), video_path, out_dir, fps, pattern)
    logger.info(f"Running: {' '.join(cmd)}")
    result = subprocess.run(cmd, capture_output=True, text=True, check=False)

    if result.stderr:
        logger.debug(f"ffmpeg stderr:\n{result.stderr}")
    if result.returncode != 0:
        err_msg = result.stderr or ""
        if "Invalid data found" in err_msg:
            raise FrameExtractionError(f"Not a decodable video: {video_path}")
        raise FrameExtractionError(f"ffmpeg failed (code {result.returncode}): {err_msg[:200]}")

    count = len(list_frame_files(out_dir, pattern))
    if count == 0:
        raise FrameExtractionError(f"ffmpeg finished but wrote no frames to {out_dir}")
    logger.info(f"Extracted {count} frames to {out_dir}")
    return count
