import json
import math

import numpy as np
import pytest

from elc.config import PipelineConfig
from elc.errors import AnalysisError, NeverLands, StageFailure
from elc.imaging import read_frame
from elc.linecall import call
from elc.pipeline import analyze_detections
from elc.synth import (
    SynthParams,
    default_court,
    detector_overrides,
    generate_dataset,
    generate_trajectory,
    ideal_positions,
    landing_time,
    observed_log,
    post_bounce_velocity,
    render_frames,
    sample_rally,
)

WORKED = SynthParams(p0=(100.0, 500.0), v0=(200.0, 300.0), g=1000.0, ground_y=700.0)


def _bisect_landing(params):
    def height(t):
        return params.p0[1] + params.v0[1] * t + 0.5 * params.g * t * t - params.ground_y

    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if height(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo


def test_worked_example():
    # 500 + 300t + 500t^2 = 700 has its positive root at t = 0.4 s (not 0.5 s), so x = 180 (not 200)
    _, _, truth = generate_trajectory(WORKED)
    assert truth.bounce_time == pytest.approx(0.4)
    assert truth.bounce_point == pytest.approx((180.0, 700.0))
    assert truth.bounce_frame == pytest.approx(96.0)


def test_landing_time_matches_bisection():
    rng = np.random.default_rng(0)
    for _ in range(50):
        params = SynthParams(p0=(0.0, rng.uniform(0, 400)), v0=(0.0, rng.uniform(-300, 300)),
                             g=rng.uniform(500, 3000), ground_y=500.0)
        t = landing_time(params.p0[1], params.v0[1], params.g, params.ground_y)
        assert t == pytest.approx(_bisect_landing(params), abs=1e-9)


def test_landing_time_without_real_root():
    assert landing_time(800.0, 0.0, 1000.0, 700.0) == math.inf


def test_post_bounce_velocity():
    assert post_bounce_velocity(10.0, 5.0, 0.7, 0.9) == pytest.approx((9.0, -3.5))


def test_never_lands_inside_the_clip():
    params = SynthParams(p0=(0.0, 100.0), v0=(0.0, -1000.0), g=100.0, ground_y=700.0, n_frames=10)
    with pytest.raises(NeverLands):
        generate_trajectory(params)


def test_start_below_ground_is_rejected():
    with pytest.raises(ValueError):
        SynthParams(p0=(0.0, 800.0), ground_y=700.0)


def test_noiseless_observations_equal_ideal_path():
    ideal, observed, _ = generate_trajectory(WORKED)
    assert len(observed) == WORKED.n_frames
    assert np.allclose([[d.x, d.y] for d in observed], ideal)


def test_full_dropout_leaves_no_observations():
    ideal, observed, truth = generate_trajectory(WORKED.model_copy(update={"dropout_p": 1.0}))
    assert observed == []
    assert np.array_equal(ideal, ideal_positions(WORKED))
    assert truth.bounce_point == pytest.approx((180.0, 700.0))


def test_noise_and_seed_do_not_move_the_truth():
    a = WORKED.model_copy(update={"noise_sigma": 2.0, "seed": 1})
    b = WORKED.model_copy(update={"noise_sigma": 0.5, "seed": 9, "dropout_p": 0.3})
    ideal_a, obs_a, truth_a = generate_trajectory(a)
    ideal_b, _, truth_b = generate_trajectory(b)
    assert truth_a == truth_b
    assert np.array_equal(ideal_a, ideal_b)
    assert obs_a != generate_trajectory(WORKED)[1]


def test_same_seed_gives_same_observations():
    params = WORKED.model_copy(update={"noise_sigma": 1.0, "dropout_p": 0.1, "seed": 4})
    assert generate_trajectory(params)[1] == generate_trajectory(params)[1]


def test_ideal_path_continues_after_the_bounce():
    ideal = ideal_positions(WORKED)
    assert np.all(ideal[:, 1] <= WORKED.ground_y)
    t_b = 0.4
    vx, vy = post_bounce_velocity(200.0, 300.0 + 1000.0 * t_b, WORKED.restitution, WORKED.friction)
    k = 120
    dt = k / WORKED.fps - t_b
    assert ideal[k, 0] == pytest.approx(180.0 + vx * dt)
    assert ideal[k, 1] == pytest.approx(700.0 + vy * dt + 0.5 * 1000.0 * dt * dt)


def test_single_disc_is_centred(tmp_path):
    params = SynthParams(p0=(50.0, 50.0), v0=(0.0, 0.0), ground_y=50.0, n_frames=1, width=100, height=100)
    render_frames(params, (0, 0, 0), str(tmp_path / "frames"))
    green = read_frame(str(tmp_path / "frames"), 0).pixels[..., 1].astype(np.float64)
    ys, xs = np.mgrid[0:100, 0:100]
    cx, cy = (green * xs).sum() / green.sum(), (green * ys).sum() / green.sum()
    assert cx == pytest.approx(50.0, abs=0.5)
    assert cy == pytest.approx(50.0, abs=0.5)


def test_rendering_is_byte_identical(tmp_path):
    # lands after about four frames
    params = SynthParams(p0=(10.0, 10.0), v0=(480.0, 2400.0), g=2000.0, ground_y=50.0,
                         n_frames=6, width=64, height=64, ball_radius=3.0)
    court = default_court(64, 64, 50)
    paths_a, truth = render_frames(params, (40, 90, 160), str(tmp_path / "a"), lead_in=2, court=court)
    paths_b, _ = render_frames(params, (40, 90, 160), str(tmp_path / "b"), lead_in=2, court=court)
    assert len(paths_a) == 8
    for pa, pb in zip(paths_a, paths_b):
        with open(pa, "rb") as fa, open(pb, "rb") as fb:
            assert fa.read() == fb.read()
    saved = json.loads((tmp_path / "a" / "ground_truth.json").read_text())
    assert saved["frame_offset"] == 2
    assert saved["true_call"] == truth.true_call


def test_sample_rally_places_the_bounce_at_the_drawn_margin():
    court = default_court(320, 240, 180)
    for seed in range(40):
        confusing = seed % 2 == 0
        params = sample_rally(np.random.default_rng(seed), court, confusing, width=320, height=240, ground_y=180)
        _, _, truth = generate_trajectory(params)
        assert truth.y == pytest.approx(180.0)
        margin = call(truth, court).margin
        if confusing:
            assert 1.0 - 1e-6 <= abs(margin) <= 3.0 + 1e-6
        else:
            assert abs(margin) >= 8.0 - 1e-6


def test_detector_overrides_bracket_the_ball_area():
    params = SynthParams(width=320, height=240, ball_radius=3.0)
    lo, hi = detector_overrides(params)["area_range"]
    assert lo * 320 * 240 == pytest.approx(0.25 * math.pi * 9)
    assert hi * 320 * 240 == pytest.approx(4.0 * math.pi * 25)


def test_generate_dataset_without_rendering(tmp_path):
    manifest_path = generate_dataset(str(tmp_path / "ds"), 20, base_seed=0, render=False)
    manifest = json.loads(open(manifest_path, encoding="utf-8").read())
    assert [m["id"] for m in manifest] == [f"rally_{i:05d}" for i in range(20)]
    assert [m["tag"] for m in manifest].count("confusing") == 1
    assert manifest[19]["tag"] == "confusing"
    for entry in manifest:
        x = entry["gt_bounce"][0]
        assert entry["gt_call"] == ("IN" if x <= 162.0 else "OUT")
        assert (tmp_path / "ds" / entry["source"]).is_file()
        assert (tmp_path / "ds" / entry["court"]).is_file()
    config = json.loads((tmp_path / "ds" / "pipeline_config.json").read_text())
    assert "area_range" in config["detector"]


def test_generate_dataset_is_reproducible(tmp_path):
    a = generate_dataset(str(tmp_path / "a"), 3, base_seed=5, render=False)
    b = generate_dataset(str(tmp_path / "b"), 3, base_seed=5, render=False)
    assert open(a, "rb").read() == open(b, "rb").read()
    detections = "rally_00006/detections.json"
    assert (tmp_path / "a" / detections).read_bytes() == (tmp_path / "b" / detections).read_bytes()


def test_noisy_rallies_fit_within_noise_bound():
    width, height, sigma = 320, 240, 1.0
    ground_y = round(0.75 * height)
    court = default_court(width, height, ground_y)
    within = 0
    seeds = range(100)
    for seed in seeds:
        params = sample_rally(np.random.default_rng(seed), court, False, width=width, height=height,
                              ground_y=ground_y, noise_sigma=sigma, dropout_p=0.05, seed=seed)
        _, observed, _ = generate_trajectory(params)
        try:
            result = analyze_detections(observed_log(params, observed), PipelineConfig(), court)
        except (StageFailure, AnalysisError):
            continue
        n = len(result.window)
        within += result.bounce.combined_mse <= n * sigma ** 2 * 4
    assert within >= 0.95 * len(seeds)
