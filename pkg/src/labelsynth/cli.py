"""Command-line entry point: ``labelsynth <command> ...``.

Reports go to stdout as tab-separated records; figures are written next to
the image outputs. Exit codes: 0 success, 1 usage or configuration error,
2 processing failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentConfig, fit_background, load_config, run_augment, with_overrides
from .camera import IDENTITY_POSE, Pose
from .errors import ConfigError, LabelSynthError
from .imaging import load_image, save_png
from .retrieval import load_embeddings, rank_top_k
from .rims import detect_label_region
from .synthesis import synthesize_view

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

SWEEPS = {
    "tx": (2, np.linspace(-40, 40, 5)),
    "ty": (3, np.linspace(-20, 20, 5)),
    "tz": (4, np.linspace(230, 270, 5)),
    "rot_x": (0, np.linspace(-30, 30, 5)),
    "rot_z": (1, np.linspace(-10, 10, 5)),
}
SWEEP_BASE = Pose(0.0, 0.0, 0.0, 0.0, 250.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(*fields) -> None:
    print("\t".join(str(f) for f in fields))


def _fmt(x: float) -> str:
    return f"{float(x):.6f}"


def _config(path) -> AugmentConfig:
    return load_config(path) if path else AugmentConfig()


def _read(path) -> np.ndarray:
    try:
        return load_image(path)
    except FileNotFoundError:
        raise OSError(f"no such file: {path}") from None
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from None


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 224x224, got {text!r}") from None
    return (w, h)


def _parse_pose(text: str) -> Pose:
    try:
        return Pose.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- commands -----------------------------------------------------------


def cmd_detect(args) -> int:
    cfg = _config(args.config)
    image = _read(args.image)
    debug = {} if args.debug else None
    try:
        region = detect_label_region(image, cfg.detect, debug=debug)
    finally:
        if debug is not None:
            out = Path(args.out or "detect_debug")
            for p in _save_stages(image, debug, out):
                _out("figure", p)
    _out("# source", args.image)
    _out("# record", "name", "fields")
    for name, e in (("upper", region.upper), ("lower", region.lower)):
        _out("ellipse", name, *(_fmt(v) for v in (e.cx, e.cy, e.a, e.b, e.theta)))
    for name, line in (("left", region.left), ("right", region.right)):
        _out("line", name, *(_fmt(v) for v in line))
    _out("vp", "at_infinity" if region.vp.is_infinite else "finite", *(_fmt(v) for v in region.vp))
    _out("wider", region.wider)
    _out("anchor", "first", *(_fmt(v) for v in region.first_anchor))
    _out("anchor", "last", *(_fmt(v) for v in region.last_anchor))
    for name, pts, e in (("upper", region.upper_points, region.upper), ("lower", region.lower_points, region.lower)):
        if pts is not None:
            _out("residual", name, _fmt(e.distance(pts).mean()), len(pts))
    return EXIT_OK


def _save_stages(image, debug, out):
    from .plotting import save_detection_stages

    return save_detection_stages(image, debug, out)


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    image = _read(args.image)
    region = detect_label_region(image, cfg.detect)
    bg = None
    if args.background:
        bg = fit_background(_read(args.background), cfg.camera.width, cfg.camera.height)

    def render(pose):
        view, mask = synthesize_view(image, region, pose, cfg.cylinder, cfg.camera)
        if bg is not None:
            view = np.where(mask[..., None], view, bg)
        return view, mask

    if args.sweep:
        from .plotting import save_gallery

        idx, values = SWEEPS[args.sweep]
        base = args.pose or SWEEP_BASE
        out = Path(args.out or f"sweep_{args.sweep}")
        out.mkdir(parents=True, exist_ok=True)
        _out("# output", "pose", "status")
        images, titles = [], []
        for v in values:
            vals = list(base.as_tuple())
            vals[idx] = float(v)
            pose = Pose(*vals)
            name = f"{args.sweep}_{v:+06.1f}.png"
            try:
                view, mask = render(pose)
            except LabelSynthError as exc:
                _out(name, pose.format(), f"failed: {exc}")
                continue
            save_png(out / name, view, mask if args.alpha else None)
            images.append(view)
            titles.append(f"{args.sweep} = {v:g}")
            _out(out / name, pose.format(), "ok")
        if not images:
            return EXIT_FAIL
        _out("figure", save_gallery(images, titles, out / "gallery.png", suptitle=f"{args.sweep} sweep"))
        return EXIT_OK

    if args.pose is None:
        raise UsageError("synth needs --pose unless --sweep is given")
    view, mask = render(args.pose)
    path = save_png(args.out or "synth.png", view, mask if args.alpha else None)
    _out("# output", "pose", "label_pixels")
    _out(path, args.pose.format(), int(mask.sum()))
    return EXIT_OK


def cmd_frontview(args) -> int:
    cfg = _config(args.config)
    image = _read(args.image)
    region = detect_label_region(image, cfg.detect)
    view, mask = synthesize_view(image, region, IDENTITY_POSE, cfg.cylinder, cfg.camera)
    path = save_png(args.out or "front.png", view, mask if args.alpha else None)
    _out("# output", "pose", "label_pixels")
    _out(path, IDENTITY_POSE.format(), int(mask.sum()))
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, count=args.count, size=args.size, backgrounds=args.backgrounds)
    if not Path(args.input_dir).is_dir():
        raise ConfigError(f"not a directory: {args.input_dir}")
    summary = run_augment(args.input_dir, cfg, args.out, jobs=args.jobs)
    _out("# input", "status", "outputs")
    counts = {}
    for rec in summary.records:
        counts[rec.source] = counts.get(rec.source, 0) + 1
    failed = dict(summary.failed)
    for name in sorted(set(counts) | set(failed)):
        if name in failed:
            _out(name, f"failed: {failed[name]}", 0)
        else:
            _out(name, "ok", counts[name])
    _out("manifest", summary.manifest)
    if summary.records:
        from .plotting import save_gallery

        shown = summary.records[:10]
        imgs = [load_image(Path(args.out) / r.output) for r in shown]
        _out("figure", save_gallery(imgs, [r.output for r in shown], Path(args.out) / "preview.png"))
    if summary.succeeded == 0:
        print("error: no input produced any output", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_rank(args) -> int:
    queries = load_embeddings(args.query)
    gallery = load_embeddings(args.gallery)
    if not queries:
        raise ConfigError(f"{args.query}: no embeddings")
    if args.k > len(gallery):
        print(f"warning: k={args.k} exceeds gallery size {len(gallery)}; returning all", file=sys.stderr)
    _out("# query", "query_class", "rank", "class_id", "similarity")
    for qi, q in enumerate(queries):
        for rank, (cid, sim) in enumerate(rank_top_k(q, gallery, args.k), start=1):
            _out(qi, q.class_id, rank, cid, _fmt(sim))
    return EXIT_OK


# -- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="labelsynth", description="Cylindrical label detection and novel-view synthesis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="detect rims and report the label region")
    d.add_argument("image")
    d.add_argument("--config", help="TOML config (camera, cylinder, detect sections)")
    d.add_argument("--debug", action="store_true", help="write stage images and an overview figure")
    d.add_argument("--out", help="directory for debug images (default detect_debug)")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("synth", help="render the label at a new pose")
    s.add_argument("image")
    s.add_argument("--pose", type=_parse_pose, help='"rot_x,rot_z,tx,ty,tz" in degrees and mm')
    s.add_argument("--sweep", choices=sorted(SWEEPS), help="render a five-step sweep of one pose axis")
    s.add_argument("--background", help="image composited behind the label")
    s.add_argument("--alpha", action="store_true", help="store the label mask as PNG alpha")
    s.add_argument("--config")
    s.add_argument("--out", help="output PNG (or directory with --sweep)")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("frontview", help="normalise the label to the frontal pose")
    f.add_argument("image")
    f.add_argument("--alpha", action="store_true")
    f.add_argument("--config")
    f.add_argument("--out", help="output PNG (default front.png)")
    f.set_defaults(func=cmd_frontview)

    a = sub.add_parser("augment", help="generate a synthetic dataset with a manifest")
    a.add_argument("input_dir")
    a.add_argument("--config")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--seed", type=int)
    a.add_argument("--count", type=int)
    a.add_argument("--size", type=_parse_size, help="WxH, e.g. 224x224")
    a.add_argument("--backgrounds", help="directory of background images")
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_augment)

    r = sub.add_parser("rank", help="top-k cosine ranking of query embeddings")
    r.add_argument("query")
    r.add_argument("gallery")
    r.add_argument("--k", type=int, default=5)
    r.set_defaults(func=cmd_rank)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LabelSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
