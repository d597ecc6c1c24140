import math

import numpy as np
import pytest
from pydantic import ValidationError

from elc.detector import (
    BackgroundModel,
    BallDetection,
    DetectionLog,
    DetectorConfig,
    OpenCvBackgroundModel,
    bg_update_and_classify,
    color_area_filter,
    detect_sequence,
    make_background_model,
    select_ball,
)
from elc.errors import DimensionMismatch
from elc.imaging import BinaryMask, Blob, FrameImage, blank_frame, iter_frame_sequence, label_components
from elc.synth import OPTIC_YELLOW, detector_overrides, generate_trajectory

GRAY = (128, 128, 128)


def _frame(pixels, index=0):
    return FrameImage.from_array(pixels, index)


def _gray_frame(value, size=16, index=0):
    return _frame(blank_frame(size, size, (value, value, value)), index)


def _blob(x, y, area=20):
    return Blob(area=area, centroid=(x, y), bbox=(int(x) - 2, int(y) - 2, int(x) + 2, int(y) + 2))


def test_single_mode_mean_follows_recursive_update():
    cfg = DetectorConfig(mixtures=1, alpha=0.1, var_init=2000.0)
    model = BackgroundModel(16, 16, cfg)
    for value in (100, 100, 100, 140):
        model, _ = bg_update_and_classify(model, _gray_frame(value))
    assert model.means[0, 0, 0] == pytest.approx([104.0, 104.0, 104.0], rel=1e-5)
    assert model.weights[0, 0, 0] == pytest.approx(1.0)


def test_static_scene_is_all_background_after_warmup():
    cfg = DetectorConfig()
    model = BackgroundModel(24, 32, cfg)
    frame = _frame(np.random.default_rng(0).integers(0, 256, (24, 32, 3), dtype=np.uint8))
    for _ in range(cfg.warmup_frames):
        mask = model.apply(frame)
    assert mask.count() == 0
    assert model.apply(frame).count() == 0


def test_new_colour_square_is_exactly_foreground():
    cfg = DetectorConfig()
    model = BackgroundModel(40, 40, cfg)
    for _ in range(cfg.warmup_frames):
        model.apply(_gray_frame(128, size=40))
    pixels = blank_frame(40, 40, GRAY)
    pixels[10:15, 20:25] = (255, 255, 0)
    mask = model.apply(_frame(pixels))
    expected = np.zeros((40, 40), dtype=bool)
    expected[10:15, 20:25] = True
    assert np.array_equal(mask.bits, expected)


def test_weights_stay_normalised_and_modes_capped():
    cfg = DetectorConfig(mixtures=3)
    model = BackgroundModel(16, 16, cfg)
    rng = np.random.default_rng(4)
    for _ in range(25):
        model.apply(_frame(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)))
        assert np.allclose(model.weights.sum(axis=2), 1.0, atol=1e-6)
        assert np.all(model.variances >= cfg.var_min)
    assert model.mode_counts().max() <= 3


def test_model_rejects_other_dimensions():
    model = BackgroundModel(16, 16, DetectorConfig())
    with pytest.raises(DimensionMismatch):
        model.apply(_gray_frame(0, size=20))


def test_opencv_backend_shares_the_interface():
    cfg = DetectorConfig(backend="opencv")
    model = make_background_model(24, 32, cfg)
    assert isinstance(model, OpenCvBackgroundModel)
    mask = model.apply(_frame(blank_frame(32, 24, GRAY)))
    assert (mask.height, mask.width) == (24, 32)


def test_config_validation():
    with pytest.raises(ValidationError):
        DetectorConfig(hue_range=(95.0, 25.0))
    with pytest.raises(ValidationError):
        DetectorConfig(area_range=(0.1, 0.01))
    with pytest.raises(ValidationError):
        DetectorConfig(warmup_frames=0)
    with pytest.raises(ValidationError):
        DetectorConfig(colour="yellow")


def _scene(square_colour, big_colour=None):
    """64x64 gray frame with a 6x6 square, optionally a 20x20 one, and its raw foreground mask."""
    pixels = blank_frame(64, 64, GRAY)
    bits = np.zeros((64, 64), dtype=bool)
    pixels[10:16, 10:16] = square_colour
    bits[10:16, 10:16] = True
    if big_colour is not None:
        pixels[30:50, 30:50] = big_colour
        bits[30:50, 30:50] = True
    return _frame(pixels), BinaryMask(bits)


GATE_CFG = DetectorConfig(area_range=(0.001, 0.05))


def test_colour_area_filter_keeps_ball_coloured_blob():
    frame, mask = _scene(OPTIC_YELLOW)
    (blob,) = color_area_filter(frame, mask, GATE_CFG)
    assert blob.centroid == pytest.approx((12.5, 12.5))
    assert blob.area == 64  # 6x6 grown by the final dilation


def test_colour_area_filter_rejects_blue_blob():
    frame, mask = _scene((40, 90, 230))
    assert color_area_filter(frame, mask, GATE_CFG) == []


def test_stage_two_removes_large_distractor():
    frame, mask = _scene(OPTIC_YELLOW, big_colour=OPTIC_YELLOW)
    _, stage_one = label_components(mask)
    assert len(stage_one) == 2
    (blob,) = color_area_filter(frame, mask, GATE_CFG)
    assert blob.area < 100


def test_select_ball_without_blobs():
    assert select_ball([], (10.0, 10.0), DetectorConfig()) is None
    assert select_ball([], None, DetectorConfig()) is None


def test_select_ball_nearest_within_gate():
    cfg = DetectorConfig(gate_radius=20.0)
    blobs = [_blob(130.0, 100.0), _blob(104.0, 100.0)]
    det = select_ball(blobs, (100.0, 100.0), cfg, frame_index=7)
    assert (det.x, det.y) == (104.0, 100.0)
    assert det.score == pytest.approx(1.0 - 4.0 / 20.0)
    assert det.frame_index == 7


def test_select_ball_nothing_inside_gate():
    cfg = DetectorConfig(gate_radius=20.0)
    assert select_ball([_blob(130.0, 100.0)], (100.0, 100.0), cfg) is None


def test_select_ball_without_prediction_uses_area():
    cfg = DetectorConfig(area_range=(0.001, 0.003))
    frame_area = 10000.0  # target area 20
    blobs = [_blob(5.0, 5.0, area=50), _blob(50.0, 50.0, area=22)]
    det = select_ball(blobs, None, cfg, frame_area=frame_area)
    assert (det.x, det.y) == (50.0, 50.0)
    assert det.score == 0.5
    single = select_ball([_blob(5.0, 5.0)], None, cfg, frame_area=frame_area)
    assert single.score == 0.5


def test_detection_log_records_round_trip():
    log = DetectionLog(fps=240.0, width=64, height=48)
    log.frame_indices.extend([0, 1])
    log.detections.extend([None, BallDetection(frame_index=1, x=1.5, y=2.25, area=9.0, score=0.8)])
    records = log.to_records()
    assert records["detections"][0] == {"frame_index": 0, "miss": True}
    again = DetectionLog.from_records(records)
    assert again.detections == log.detections
    assert again.frame_indices == [0, 1]


def test_detect_sequence_centroids_on_rendered_frames(rendered_rally):
    params = rendered_rally["params"]
    cfg = DetectorConfig(**detector_overrides(params))
    frames = iter_frame_sequence(rendered_rally["dir"], fps=params.fps)
    log = detect_sequence(frames, cfg, params.fps)

    ideal, _, _ = generate_trajectory(params)
    lead_in = 30
    visible = {
        k for k in range(params.n_frames)
        if 5 <= ideal[k, 0] <= params.width - 5 and 5 <= ideal[k, 1] <= params.height - 5
    }
    found = {d.frame_index - lead_in: d for d in log.found if d.frame_index - lead_in in visible}
    assert len(visible) > 20
    assert len(found) >= 0.9 * len(visible)
    close = [
        math.hypot(det.x - ideal[k, 0], det.y - ideal[k, 1]) <= 1.0
        for k, det in found.items()
    ]
    assert sum(close) >= 0.99 * len(close)
    assert all(d is None for d in log.detections[:lead_in])


def test_detect_sequence_is_deterministic(rendered_rally):
    params = rendered_rally["params"]
    cfg = DetectorConfig(**detector_overrides(params))
    runs = [
        detect_sequence(iter_frame_sequence(rendered_rally["dir"]), cfg, params.fps).to_records()
        for _ in range(2)
    ]
    assert runs[0] == runs[1]
