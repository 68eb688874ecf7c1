from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelsynth.augment import (
    AugmentConfig,
    Jitter,
    JitterConfig,
    ManifestRecord,
    PoseRanges,
    config_from_dict,
    fit_background,
    image_seed,
    load_config,
    read_manifest,
    replay_record,
    run_augment,
    sample_poses,
    with_overrides,
)
from labelsynth.camera import IDENTITY_POSE, Pose
from labelsynth.errors import ConfigError
from labelsynth.imaging import load_image, save_png

from _support import cached_render


@pytest.fixture(scope="module")
def input_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("labels")
    img, _ = cached_render(IDENTITY_POSE, 11)
    save_png(d / "bottle_a.png", img)
    img, _ = cached_render(Pose(5.0, 3.0, 0.0, 0.0, 240.0), 12)
    save_png(d / "bottle_b.png", img)
    return d


@pytest.fixture(scope="module")
def background_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("bg")
    rng = np.random.default_rng(0)
    for i, shape in enumerate([(300, 500), (600, 400)]):
        save_png(d / f"bg{i}.png", rng.integers(60, 256, size=(*shape, 3)).astype(np.uint8))
    return d


def files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


# -- configuration ------------------------------------------------------------------


def test_defaults():
    cfg = AugmentConfig()
    assert cfg.count == 320 and cfg.size == (224, 224)
    assert cfg.pose.rot_z_deg == (-10.0, 10.0) and cfg.pose.rot_x_deg == (-15.0, 15.0)
    assert cfg.pose.tx == (-40.0, 40.0) and cfg.pose.ty == (-20.0, 20.0) and cfg.pose.tz == (230.0, 270.0)
    assert cfg.jitter == JitterConfig(20.0, 0.15, 0.15, 0.15)
    assert cfg.backgrounds is None


def test_load_config(tmp_path):
    path = tmp_path / "aug.toml"
    path.write_text(
        """
count = 12
seed = 7
size = [128, 96]
backgrounds = "bg"

[pose]
rot_x_deg = [-30.0, 30.0]

[jitter]
brightness = 0.0

[camera]
focal_mm = 4.2

[cylinder]
label_top_mm = 40.0
label_bottom_mm = -40.0

[detect]
min_gradient = 60.0
""",
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert (cfg.count, cfg.seed, cfg.size) == (12, 7, (128, 96))
    assert cfg.backgrounds == tmp_path / "bg"
    assert cfg.pose.rot_x_deg == (-30.0, 30.0) and cfg.pose.tz == (230.0, 270.0)
    assert cfg.jitter.brightness == 0.0 and cfg.jitter.contrast == 0.15
    assert cfg.camera.focal_mm == 4.2
    assert cfg.cylinder.label_top_mm == 40.0
    assert cfg.detect.min_gradient == 60.0


@pytest.mark.parametrize(
    "data",
    [
        {"colour": 1},
        {"count": 0},
        {"count": 2.5},
        {"size": [16, 224]},
        {"size": "224x224"},
        {"pose": {"tz": [270.0, 230.0]}},
        {"pose": {"tz": 250.0}},
        {"pose": {"yaw": [0.0, 1.0]}},
        {"jitter": {"contrast": -0.1}},
        {"camera": {"focal_mm": -1.0}},
        {"detect": {"min_edge_fraction": 2.0}},
        {"cylinder": "big"},
    ],
)
def test_config_errors(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("count = = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_with_overrides():
    cfg = with_overrides(AugmentConfig(), seed=5, count=None, backgrounds="x")
    assert cfg.seed == 5 and cfg.count == 320 and cfg.backgrounds == Path("x")


# -- sampling --------------------------------------------------------------------------


def test_poses_inside_ranges():
    ranges = PoseRanges()
    poses = sample_poses(np.random.default_rng(0), ranges, 100_000)
    b = ranges.bounds()
    assert poses.shape == (100_000, 5)
    assert np.all(poses >= b[:, 0]) and np.all(poses <= b[:, 1])
    # uniform: means at the centre, spread close to width / sqrt(12)
    assert np.allclose(poses.mean(axis=0), b.mean(axis=1), atol=0.01 * np.ptp(b, axis=1))
    assert np.allclose(poses.std(axis=0), np.ptp(b, axis=1) / np.sqrt(12), rtol=0.02)


def test_image_seed():
    assert image_seed(0, "a.png", 3) == image_seed(0, "a.png", 3)
    seeds = {image_seed(0, "a.png", i) for i in range(100)}
    assert len(seeds) == 100
    assert image_seed(1, "a.png", 3) != image_seed(0, "a.png", 3)
    assert 0 <= image_seed(2**40, "x", 10**6) < 2**63


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jitter_keeps_gamut_and_shape(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(17, 23, 3)).astype(float)
    j = Jitter.draw(rng, JitterConfig(60.0, 0.9, 0.9, 0.9))
    out = j.apply(img)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 255.0
    assert Jitter.parse(j.format()) == j


def test_jitter_amplitudes_bounded():
    rng = np.random.default_rng(1)
    cfg = JitterConfig()
    for _ in range(1000):
        j = Jitter.draw(rng, cfg)
        assert max(abs(v) for v in j.shift) <= 20.0
        assert max(abs(j.brightness), abs(j.contrast), abs(j.saturation)) <= 0.15


def test_zero_jitter_is_identity():
    img = np.random.default_rng(2).integers(0, 256, size=(5, 6, 3)).astype(float)
    assert np.allclose(Jitter().apply(img), img)


def test_fit_background_crops_centre():
    img = np.zeros((100, 400, 3), dtype=np.uint8)
    img[:, 100:300] = 200  # the centre crop at 4:3 is columns 133..266
    out = fit_background(img, 64, 48)
    assert out.shape == (48, 64, 3)
    assert np.all(out == 200)


def test_manifest_record_round_trip():
    rec = ManifestRecord("a_0001.png", "a.png", Pose(1.5, -2.25, 3.0, 4.0, 250.125), "none",
                         Jitter((1.0, -2.0, 0.5), 0.1, -0.05, 0.0), 12345)
    assert ManifestRecord.parse(rec.format()) == rec
    with pytest.raises(ValueError):
        ManifestRecord.parse("a\tb\tc")


# -- generation -----------------------------------------------------------------------------


def test_run_is_deterministic_and_replayable(input_dir, tmp_path):
    cfg = AugmentConfig(count=3, seed=42, size=(96, 64))
    s1 = run_augment(input_dir, cfg, tmp_path / "one")
    s2 = run_augment(input_dir, cfg, tmp_path / "two", jobs=2)
    assert s1.succeeded == 2 and not s1.failed
    assert files(tmp_path / "one") == files(tmp_path / "two")
    records = read_manifest(s1.manifest)
    assert [r.output for r in records] == [f"bottle_{s}_{i:04d}.png" for s in "ab" for i in range(3)]
    for rec in records:
        img = load_image(tmp_path / "one" / rec.output)
        assert img.shape == (64, 96, 3)
        b = cfg.pose.bounds()
        assert np.all(np.array(rec.pose.as_tuple()) >= b[:, 0]) and np.all(np.array(rec.pose.as_tuple()) <= b[:, 1])
    again, _ = replay_record(records[4], input_dir, cfg)
    assert np.array_equal(again, load_image(tmp_path / "one" / records[4].output))
    s3 = run_augment(input_dir, with_overrides(cfg, seed=43), tmp_path / "three")
    assert files(tmp_path / "three") != files(tmp_path / "one")
    assert s3.succeeded == 2


def test_backgrounds_replace_black(input_dir, background_dir, tmp_path):
    cfg = AugmentConfig(count=2, seed=1, size=(112, 112), backgrounds=background_dir)
    summary = run_augment(input_dir, cfg, tmp_path)
    assert len(summary.records) == 4
    for rec in summary.records:
        assert rec.background in ("bg0.png", "bg1.png")
        img = load_image(tmp_path / rec.output)
        assert not np.any(np.all(img == 0, axis=-1))
    again, _ = replay_record(summary.records[1], input_dir, cfg)
    assert np.array_equal(again, load_image(tmp_path / summary.records[1].output))


def test_undetectable_input_is_skipped(input_dir, tmp_path):
    d = tmp_path / "in"
    d.mkdir()
    (d / "good.png").write_bytes((input_dir / "bottle_a.png").read_bytes())
    save_png(d / "blank.png", np.zeros((480, 640, 3), dtype=np.uint8))
    summary = run_augment(d, AugmentConfig(count=1), tmp_path / "out")
    assert summary.succeeded == 1
    assert [name for name, _ in summary.failed] == ["blank.png"]
    assert "no rim found" in summary.failed[0][1]
    assert [r.source for r in summary.records] == ["good.png"]


def test_empty_background_dir(input_dir, tmp_path):
    (tmp_path / "bg").mkdir()
    with pytest.raises(ConfigError):
        run_augment(input_dir, AugmentConfig(count=1, backgrounds=tmp_path / "bg"), tmp_path / "out")
