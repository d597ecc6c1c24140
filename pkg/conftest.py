import math

import cv2
import numpy as np
import pytest

from elc.detector import BallDetection
from elc.linecall import CourtLine, CourtLineSpec
from elc.synth import COURT_BLUE, default_court, render_frames, sample_rally
from elc.tracker import Trajectory


def bounce_track(t_b, xb=400.0, yb=600.0, vx=3.0, impact=4.0, g=0.04, e=0.7, mu=0.9,
                 frames=range(21), noise=0.0, seed=0, frame_size=None, fps=240.0):
    """Piecewise-parabolic ball path in frame units with its first bounce at frame t_b."""
    rng = np.random.default_rng(seed)
    points = []
    for f in frames:
        s = f - t_b
        if s <= 0:
            x, y = xb + vx * s, yb + impact * s + 0.5 * g * s * s
        else:
            x, y = xb + mu * vx * s, yb - e * impact * s + 0.5 * g * s * s
        if noise:
            dx, dy = rng.normal(0.0, noise, 2)
            x, y = x + dx, y + dy
        points.append(BallDetection(frame_index=int(f), x=float(x), y=float(y), area=30.0))
    return Trajectory(tuple(points), fps, frame_size)


@pytest.fixture
def make_track():
    return bounce_track


@pytest.fixture
def box_court():
    """Square court 100..200 px on both axes, in-bounds inside, 0 px lines."""
    return CourtLineSpec(lines=[
        CourtLine(name="baseline", p0=(100.0, 100.0), p1=(200.0, 100.0), in_side=1),
        CourtLine(name="far", p0=(100.0, 200.0), p1=(200.0, 200.0), in_side=-1),
        CourtLine(name="left", p0=(100.0, 100.0), p1=(100.0, 200.0), in_side=-1),
        CourtLine(name="right", p0=(200.0, 100.0), p1=(200.0, 200.0), in_side=1),
    ])


@pytest.fixture
def write_frames():
    def _write(directory, images, start=0, pattern="frame_%06d.png"):
        directory.mkdir(parents=True, exist_ok=True)
        for k, rgb in enumerate(images):
            cv2.imwrite(str(directory / (pattern % (start + k))), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
        return directory
    return _write


@pytest.fixture(scope="session")
def rendered_rally(tmp_path_factory):
    """One noiseless rendered rally on the default 320x240 court, with its params, court and truth."""
    width, height = 320, 240
    ground_y = round(0.75 * height)
    court = default_court(width, height, ground_y)
    params = sample_rally(np.random.default_rng(3), court, False, width=width, height=height,
                          ground_y=ground_y, noise_sigma=0.0, dropout_p=0.0, seed=3)
    out_dir = tmp_path_factory.mktemp("rendered") / "frames"
    _, truth = render_frames(params, COURT_BLUE, str(out_dir), lead_in=30, court=court)
    return {"dir": str(out_dir), "params": params, "court": court, "truth": truth}


def distance(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])
