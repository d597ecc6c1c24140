import colorsys

import cv2
import numpy as np
import pytest

from elc.errors import MissingDirectory, MissingFrames, MixedDimensions, UndecodableFrame
from elc.imaging import (
    BinaryMask,
    FrameImage,
    blank_frame,
    connected_components,
    frame_gaps,
    load_frame_sequence,
    morph_open_dilate,
    read_frame,
    rgb_to_hsv,
)


def _mask(height, width, pixels):
    bits = np.zeros((height, width), dtype=bool)
    for x, y in pixels:
        bits[y, x] = True
    return BinaryMask(bits)


def test_load_frame_sequence_assigns_timestamps(tmp_path, write_frames):
    write_frames(tmp_path / "f", [blank_frame(32, 24, (k, k, k)) for k in range(3)])
    frames = load_frame_sequence(str(tmp_path / "f"), fps=240.0)
    assert [f.frame_index for f in frames] == [0, 1, 2]
    assert [f.timestamp for f in frames] == pytest.approx([0.0, 1 / 240, 2 / 240])
    assert frames[0].width == 32 and frames[0].height == 24
    assert frames[2].pixels[0, 0].tolist() == [2, 2, 2]


def test_load_frame_sequence_sorts_by_embedded_index(tmp_path, write_frames):
    d = tmp_path / "f"
    write_frames(d, [blank_frame(16, 16, (5, 5, 5))], start=10)
    write_frames(d, [blank_frame(16, 16, (1, 1, 1))], start=2)
    frames = load_frame_sequence(str(d))
    assert [f.frame_index for f in frames] == [2, 10]


def test_empty_directory_is_missing_frames(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(MissingFrames):
        load_frame_sequence(str(tmp_path / "empty"))


def test_missing_directory(tmp_path):
    with pytest.raises(MissingDirectory):
        load_frame_sequence(str(tmp_path / "nope"))


def test_mixed_dimensions(tmp_path, write_frames):
    d = tmp_path / "f"
    write_frames(d, [blank_frame(16, 16)])
    write_frames(d, [blank_frame(20, 16)], start=1)
    with pytest.raises(MixedDimensions):
        load_frame_sequence(str(d))


def test_undecodable_frame_reports_filename(tmp_path):
    d = tmp_path / "f"
    d.mkdir()
    (d / "frame_000000.png").write_bytes(b"definitely not a png")
    with pytest.raises(UndecodableFrame) as info:
        load_frame_sequence(str(d))
    assert info.value.filename == "frame_000000.png"


def test_gap_in_numbering_is_kept_and_reported(tmp_path, write_frames):
    d = tmp_path / "f"
    write_frames(d, [blank_frame(16, 16)] * 2)
    write_frames(d, [blank_frame(16, 16)], start=5)
    frames = load_frame_sequence(str(d))
    assert [f.frame_index for f in frames] == [0, 1, 5]
    assert frame_gaps(frames) == [(2, 4)]


def test_ppm_frames_and_alpha_are_accepted(tmp_path):
    d = tmp_path / "f"
    d.mkdir()
    cv2.imwrite(str(d / "frame_000000.ppm"), np.full((16, 16, 3), 200, dtype=np.uint8))
    rgba = np.zeros((16, 16, 4), dtype=np.uint8)
    rgba[..., 2] = 255  # red in BGRA
    rgba[..., 3] = 10
    cv2.imwrite(str(d / "frame_000001.png"), rgba)
    frames = load_frame_sequence(str(d))
    assert len(frames) == 2
    assert frames[1].pixels.shape == (16, 16, 3)
    assert frames[1].pixels[0, 0].tolist() == [255, 0, 0]


def test_read_frame_picks_nearest_index(tmp_path, write_frames):
    d = tmp_path / "f"
    write_frames(d, [blank_frame(16, 16, (k * 10, 0, 0)) for k in range(4)])
    frame = read_frame(str(d), 7)
    assert frame.frame_index == 3
    assert frame.pixels[0, 0, 0] == 30


def test_frame_image_rejects_tiny_frames():
    with pytest.raises(ValueError):
        FrameImage.from_array(np.zeros((8, 8, 3), dtype=np.uint8))


@pytest.mark.parametrize("rgb, hsv", [
    ((255, 255, 0), (60.0, 1.0, 1.0)),
    ((0, 0, 0), (0.0, 0.0, 0.0)),
    ((128, 128, 128), (0.0, 0.0, 128 / 255)),
    ((0, 0, 255), (240.0, 1.0, 1.0)),
])
def test_rgb_to_hsv_examples(rgb, hsv):
    assert rgb_to_hsv(*rgb) == pytest.approx(hsv, abs=1e-4)


def test_rgb_to_hsv_rejects_out_of_range():
    with pytest.raises(ValueError):
        rgb_to_hsv(256, 0, 0)


def test_rgb_to_hsv_round_trips_through_reference_inverse():
    rng = np.random.default_rng(0)
    for r, g, b in rng.integers(0, 256, size=(200, 3)):
        h, s, v = rgb_to_hsv(int(r), int(g), int(b))
        if s == 0:
            continue
        back = np.array(colorsys.hsv_to_rgb(h / 360.0, s, v)) * 255.0
        assert np.all(np.abs(back - [r, g, b]) <= 1.0)


def test_morph_radius_zero_is_identity():
    rng = np.random.default_rng(1)
    mask = BinaryMask(rng.random((20, 20)) > 0.5)
    assert np.array_equal(morph_open_dilate(mask, 0).bits, mask.bits)


def test_morph_removes_isolated_pixel():
    assert morph_open_dilate(_mask(20, 20, [(10, 10)]), 1).count() == 0


def test_morph_keeps_and_grows_solid_square():
    bits = np.zeros((30, 30), dtype=bool)
    bits[10:20, 10:20] = True
    out = morph_open_dilate(BinaryMask(bits), 1).bits
    assert np.all(out[bits])
    assert out.sum() == 12 * 12


def test_morph_output_components_survive_erosion():
    rng = np.random.default_rng(2)
    mask = BinaryMask(rng.random((40, 40)) > 0.6)
    r = 1
    out = morph_open_dilate(mask, r)
    kernel = np.ones((2 * r + 1, 2 * r + 1), dtype=np.uint8)
    _, labels = cv2.connectedComponents(out.as_uint8(), connectivity=8)
    for label in range(1, labels.max() + 1):
        component = (labels == label).astype(np.uint8)
        assert cv2.erode(component, kernel).any()


def test_connected_components_empty():
    assert connected_components(BinaryMask.zeros(16, 16)) == []


def test_connected_components_square():
    bits = np.zeros((20, 20), dtype=bool)
    bits[10:13, 10:13] = True
    (blob,) = connected_components(BinaryMask(bits))
    assert blob.area == 9
    assert blob.centroid == pytest.approx((11.0, 11.0))
    assert blob.bbox == (10, 10, 12, 12)


def test_connected_components_uses_eight_connectivity():
    blobs = connected_components(_mask(16, 16, [(3, 3), (4, 4)]))
    assert len(blobs) == 1 and blobs[0].area == 2


def test_connected_components_areas_and_translation():
    rng = np.random.default_rng(3)
    bits = np.zeros((50, 50), dtype=bool)
    bits[5:30, 5:30] = rng.random((25, 25)) > 0.5
    mask = BinaryMask(bits)
    blobs = connected_components(mask)
    assert sum(b.area for b in blobs) == mask.count()

    shifted = connected_components(BinaryMask(np.roll(np.roll(bits, 7, axis=0), 4, axis=1)))
    before = sorted((b.centroid[0] + 4, b.centroid[1] + 7) for b in blobs)
    after = sorted(b.centroid for b in shifted)
    assert np.allclose(before, after, atol=1e-9)
