import numpy as np
import pytest

from labelsynth.camera import IDENTITY_POSE, Pose, target_region
from labelsynth.cli import main
from labelsynth.conic import Ellipse
from labelsynth.imaging import load_image, save_png

from _support import DEFAULTS, arc_rms, cached_render

CYL, CAM = DEFAULTS


@pytest.fixture(scope="module")
def label_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "label.png"
    img, _ = cached_render(IDENTITY_POSE, 21)
    save_png(path, img)
    return path


@pytest.fixture
def blank_png(tmp_path):
    path = tmp_path / "blank.png"
    save_png(path, np.zeros((480, 640, 3), dtype=np.uint8))
    return path


def records(text, kind):
    return [line.split("\t") for line in text.splitlines() if line.split("\t")[0] == kind]


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "labelsynth" in capsys.readouterr().out


def test_no_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_detect_report_matches_analytic(label_png, capsys):
    assert main(["detect", str(label_png)]) == 0
    out = capsys.readouterr().out
    truth = target_region(IDENTITY_POSE, CYL, CAM)
    ellipses = {r[1]: Ellipse(*map(float, r[2:7])) for r in records(out, "ellipse")}
    assert arc_rms(ellipses["upper"], truth.upper_arc) <= 2.0
    assert arc_rms(ellipses["lower"], truth.lower_arc) <= 2.0
    lines = {r[1]: np.array(r[2:5], dtype=float) for r in records(out, "line")}
    assert set(lines) == {"left", "right"}
    # frontal view: the two silhouettes are parallel to within 0.1 degree
    angle = lambda l: np.degrees(np.arctan2(l[1], l[0])) % 180
    gap = abs(angle(lines["left"]) - angle(lines["right"]))
    assert min(gap, 180 - gap) <= 0.1
    assert records(out, "vp")[0][1] in ("finite", "at_infinity")
    assert len(records(out, "anchor")) == 2


def test_detect_debug_writes_stages(label_png, tmp_path, capsys):
    out_dir = tmp_path / "dbg"
    assert main(["detect", str(label_png), "--debug", "--out", str(out_dir)]) == 0
    names = {p.name for p in out_dir.iterdir()}
    expected = {"01_gray.png", "02_gradient.png", "03_edges.png", "04_blocks.png", "05_chains.png",
                "06_region.png", "overview.png"}
    assert expected <= names
    assert len(records(capsys.readouterr().out, "figure")) == len(expected)


def test_detect_blank(blank_png, tmp_path, capsys):
    assert main(["detect", str(blank_png), "--debug", "--out", str(tmp_path / "dbg")]) == 2
    assert "no rim found" in capsys.readouterr().err
    assert (tmp_path / "dbg" / "03_edges.png").exists()


def test_detect_missing_file(tmp_path, capsys):
    assert main(["detect", str(tmp_path / "nope.png")]) == 2
    assert "no such file" in capsys.readouterr().err


def test_synth_identity(label_png, tmp_path, capsys):
    out = tmp_path / "s.png"
    assert main(["synth", str(label_png), "--pose", "0,0,0,0,150", "--out", str(out), "--alpha"]) == 0
    img = load_image(out)
    src = load_image(label_png)
    assert img.shape == (480, 640, 3)
    row = records(capsys.readouterr().out, str(out))[0]
    assert int(row[2]) > 50000
    inside = (img.sum(axis=-1) > 0) & (src.sum(axis=-1) > 0)
    assert np.abs(img.astype(float) - src)[inside].mean() <= 2.0


def test_synth_with_background(label_png, tmp_path):
    bg = tmp_path / "bg.png"
    save_png(bg, np.full((300, 300, 3), 77, dtype=np.uint8))
    out = tmp_path / "s.png"
    assert main(["synth", str(label_png), "--pose", "5,5,10,0,240", "--background", str(bg), "--out", str(out)]) == 0
    img = load_image(out)
    assert np.all(img[0, 0] == 77)


def test_synth_errors(label_png, tmp_path, capsys):
    assert main(["synth", str(label_png), "--pose", "0,0,0,0,0", "--out", str(tmp_path / "x.png")]) == 2
    assert main(["synth", str(label_png)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["synth", str(label_png), "--pose", "1,2,3"])
    assert exc.value.code == 1


def test_synth_sweep(label_png, tmp_path, capsys):
    out_dir = tmp_path / "sweep"
    assert main(["synth", str(label_png), "--sweep", "rot_z", "--out", str(out_dir)]) == 0
    pngs = sorted(p.name for p in out_dir.glob("rot_z_*.png"))
    assert len(pngs) == 5
    assert (out_dir / "gallery.png").exists()
    rows = [r for r in capsys.readouterr().out.splitlines() if r.endswith("\tok")]
    assert len(rows) == 5


def test_frontview(tmp_path, capsys):
    src = tmp_path / "tilted.png"
    img, _ = cached_render(Pose(10.0, -5.0, 20.0, 5.0, 245.0), 22)
    save_png(src, img)
    out = tmp_path / "front.png"
    assert main(["frontview", str(src), "--out", str(out)]) == 0
    front = load_image(out)
    truth = target_region(IDENTITY_POSE, CYL, CAM).mask(CAM.shape)
    lit = front.sum(axis=-1) > 0
    assert (lit & truth).sum() / (lit | truth).sum() > 0.97


def test_augment(label_png, tmp_path, capsys):
    in_dir = tmp_path / "in"
    in_dir.mkdir()
    (in_dir / "label.png").write_bytes(label_png.read_bytes())
    cfg = tmp_path / "aug.toml"
    cfg.write_text("count = 2\nsize = [64, 64]\n")
    out_dir = tmp_path / "out"
    assert main(["augment", str(in_dir), "--config", str(cfg), "--out", str(out_dir), "--seed", "3"]) == 0
    text = capsys.readouterr().out
    assert records(text, "label.png")[0][1:] == ["ok", "2"]
    assert (out_dir / "manifest.tsv").exists() and (out_dir / "preview.png").exists()
    assert load_image(out_dir / "label_0001.png").shape == (64, 64, 3)


def test_augment_errors(blank_png, tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("count = 0\n")
    in_dir = blank_png.parent
    assert main(["augment", str(in_dir), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert main(["augment", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    assert main(["augment", str(in_dir), "--count", "1", "--out", str(tmp_path / "o")]) == 2
    assert "failed" in capsys.readouterr().out


def test_augment_size_flag(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["augment", str(tmp_path), "--out", str(tmp_path), "--size", "big"])
    assert exc.value.code == 1


def test_rank(tmp_path, capsys):
    gallery = tmp_path / "gallery.txt"
    gallery.write_text("1 1 0 0\n2 0 1 0\n3 0 0 1\n")
    query = tmp_path / "query.txt"
    query.write_text("2 0 2 0\n3 0.1 0 1\n")
    assert main(["rank", str(query), str(gallery), "--k", "2"]) == 0
    rows = records(capsys.readouterr().out, "0")
    assert rows[0][1:4] == ["2", "1", "2"] and float(rows[0][4]) == pytest.approx(1.0)
    assert len(rows) == 2


def test_rank_k_too_large_warns(tmp_path, capsys):
    gallery = tmp_path / "g.txt"
    gallery.write_text("1 1 0\n2 0 1\n")
    assert main(["rank", str(gallery), str(gallery), "--k", "5"]) == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    assert len(records(captured.out, "0")) == 2


def test_rank_malformed_line(tmp_path, capsys):
    good = tmp_path / "g.txt"
    good.write_text("1 1 0\n2 0 1\n")
    bad = tmp_path / "b.txt"
    bad.write_text("1 1 0\n2 zero 1\n")
    assert main(["rank", str(bad), str(good)]) != 0
    assert "line 2" in capsys.readouterr().err
