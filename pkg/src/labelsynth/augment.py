"""Batch generation of synthetic training views from label photos.

For each input photo the label is detected once, then ``count`` new views
are rendered at randomly drawn poses, optionally pasted over a random
background, colour-jittered and resized. Each output is driven by its own
seed derived from the master seed, the input name and the output index, so
results never depend on generation order, and every output is described by
one manifest record that is enough to regenerate it exactly.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli

from .camera import CameraIntrinsics, CylinderModel, Pose
from .errors import ConfigError, LabelSynthError
from .imaging import load_image, resize, save_png
from .region import LabelRegion
from .rims import RimDetectParams, detect_label_region
from .synthesis import synthesize_view

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "# output\tsource\tpose\tbackground\tjitter\tseed\n"
POSE_KEYS = ("rot_x_deg", "rot_z_deg", "tx", "ty", "tz")
MAX_POSE_DRAWS = 20


@dataclass(frozen=True)
class PoseRanges:
    rot_x_deg: tuple[float, float] = (-15.0, 15.0)
    rot_z_deg: tuple[float, float] = (-10.0, 10.0)
    tx: tuple[float, float] = (-40.0, 40.0)
    ty: tuple[float, float] = (-20.0, 20.0)
    tz: tuple[float, float] = (230.0, 270.0)

    def __post_init__(self):
        for key in POSE_KEYS:
            lo, hi = getattr(self, key)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError(f"pose range {key} must satisfy low <= high, got [{lo}, {hi}]")

    def bounds(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in POSE_KEYS], dtype=float)


@dataclass(frozen=True)
class JitterConfig:
    """Amplitudes: ``channel_shift`` in gray levels, the rest as fractions."""

    channel_shift: float = 20.0
    brightness: float = 0.15
    contrast: float = 0.15
    saturation: float = 0.15

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"jitter.{f.name} must be a non-negative number")


@dataclass(frozen=True)
class AugmentConfig:
    count: int = 320
    size: tuple[int, int] = (224, 224)
    seed: int = 0
    backgrounds: Path | None = None
    pose: PoseRanges = field(default_factory=PoseRanges)
    jitter: JitterConfig = field(default_factory=JitterConfig)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    cylinder: CylinderModel = field(default_factory=CylinderModel)
    detect: RimDetectParams = field(default_factory=RimDetectParams)

    def __post_init__(self):
        if int(self.count) < 1:
            raise ConfigError("count must be at least 1")
        w, h = self.size
        if w < 32 or h < 32:
            raise ConfigError("output size must be at least 32x32")


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
    try:
        if cls is PoseRanges:
            vals = {}
            for k, v in data.items():
                if not (isinstance(v, list) and len(v) == 2):
                    raise ConfigError(f"pose.{k} must be a [low, high] pair")
                vals[k] = (float(v[0]), float(v[1]))
            return cls(**vals)
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def config_from_dict(data: dict, base_dir: Path | None = None) -> AugmentConfig:
    """Build a config from parsed TOML; relative paths resolve against ``base_dir``."""
    top = {"count", "size", "seed", "backgrounds", "pose", "jitter", "camera", "cylinder", "detect"}
    extra = set(data) - top
    if extra:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(extra))}")
    kw = {}
    if "count" in data:
        if not isinstance(data["count"], int):
            raise ConfigError("count must be an integer")
        kw["count"] = data["count"]
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kw["seed"] = data["seed"]
    if "size" in data:
        size = data["size"]
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(s, int) for s in size)):
            raise ConfigError("size must be [width, height] integers")
        kw["size"] = (size[0], size[1])
    if data.get("backgrounds"):
        p = Path(data["backgrounds"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        kw["backgrounds"] = p
    kw["pose"] = _section(PoseRanges, data.get("pose"), "pose")
    kw["jitter"] = _section(JitterConfig, data.get("jitter"), "jitter")
    kw["camera"] = _section(CameraIntrinsics, data.get("camera"), "camera")
    kw["cylinder"] = _section(CylinderModel, data.get("cylinder"), "cylinder")
    kw["detect"] = _section(RimDetectParams, data.get("detect"), "detect")
    return AugmentConfig(**kw)


def load_config(path) -> AugmentConfig:
    path = Path(path)
    try:
        data = tomli.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, path.parent)


# -- randomness ---------------------------------------------------------


def image_seed(master_seed: int, source_name: str, index: int) -> int:
    """Seed for one output, independent of generation order."""
    digest = hashlib.sha256(f"{master_seed}:{source_name}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def sample_poses(rng: np.random.Generator, ranges: PoseRanges, n: int = 1) -> np.ndarray:
    """``(n, 5)`` poses, independent and uniform per axis."""
    b = ranges.bounds()
    return rng.uniform(b[:, 0], b[:, 1], size=(n, 5))


@dataclass(frozen=True)
class Jitter:
    shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0

    @classmethod
    def draw(cls, rng: np.random.Generator, cfg: JitterConfig) -> Jitter:
        shift = rng.uniform(-cfg.channel_shift, cfg.channel_shift, size=3)
        b, c, s = rng.uniform(-1.0, 1.0, size=3) * (cfg.brightness, cfg.contrast, cfg.saturation)
        return cls(tuple(float(v) for v in shift), float(b), float(c), float(s))

    def as_tuple(self) -> tuple[float, ...]:
        return (*self.shift, self.brightness, self.contrast, self.saturation)

    def format(self) -> str:
        return ",".join(repr(v) for v in self.as_tuple())

    @classmethod
    def parse(cls, text: str) -> Jitter:
        v = [float(x) for x in text.split(",")]
        if len(v) != 6:
            raise ValueError(f"jitter needs 6 values, got {text!r}")
        return cls((v[0], v[1], v[2]), v[3], v[4], v[5])

    def apply(self, image) -> np.ndarray:
        """Channel shift, brightness, contrast, saturation; clamped to [0, 255]."""
        x = np.asarray(image, dtype=float) + np.asarray(self.shift)
        x = x * (1.0 + self.brightness)
        gray = x @ np.array([0.299, 0.587, 0.114])
        x = (x - gray.mean()) * (1.0 + self.contrast) + gray.mean()
        gray = (x @ np.array([0.299, 0.587, 0.114]))[..., None]
        x = gray + (x - gray) * (1.0 + self.saturation)
        return np.clip(x, 0.0, 255.0)


# -- backgrounds --------------------------------------------------------


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def fit_background(image, width: int, height: int) -> np.ndarray:
    """Centre-crop to the frame's aspect ratio, then resize to the frame."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    target = width / height
    if w / h > target:
        cw = max(1, int(round(h * target)))
        x0 = (w - cw) // 2
        img = img[:, x0 : x0 + cw]
    else:
        ch = max(1, int(round(w / target)))
        y0 = (h - ch) // 2
        img = img[y0 : y0 + ch]
    return resize(np.ascontiguousarray(img), (width, height))


# -- records ------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    output: str
    source: str
    pose: Pose
    background: str  # file name, or "none"
    jitter: Jitter
    seed: int

    def format(self) -> str:
        return "\t".join(
            [self.output, self.source, self.pose.format(), self.background, self.jitter.format(), str(self.seed)]
        )

    @classmethod
    def parse(cls, line: str) -> ManifestRecord:
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise ValueError(f"manifest record needs 6 tab-separated fields, got {len(parts)}")
        return cls(parts[0], parts[1], Pose.parse(parts[2]), parts[3], Jitter.parse(parts[4]), int(parts[5]))


def read_manifest(path) -> list[ManifestRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ManifestRecord.parse(l) for l in lines if l and not l.startswith("#")]


def render_record(
    image, region: LabelRegion, pose: Pose, background, jitter: Jitter, config: AugmentConfig
):
    """Deterministic rendering of one output from fully specified parameters.

    Returns ``(image uint8 at config.size, mask)``.
    """
    view, mask = synthesize_view(image, region, pose, config.cylinder, config.camera)
    frame = view.astype(float)
    if background is not None:
        frame = np.where(mask[..., None], frame, np.asarray(background, dtype=float))
    frame = jitter.apply(frame)
    out = resize(np.clip(np.rint(frame), 0, 255).astype(np.uint8), config.size)
    small = resize((mask * 255).astype(np.uint8), config.size) >= 128
    return out, small


class _Source:
    """One input photo with its detected region."""

    def __init__(self, path: Path, config: AugmentConfig):
        self.path = path
        self.image = load_image(path)
        self.region = detect_label_region(self.image, config.detect)


class _Backgrounds:
    def __init__(self, paths: list[Path], camera: CameraIntrinsics):
        self.paths = paths
        self.camera = camera
        self._cache: dict[str, np.ndarray] = {}

    def get(self, name: str) -> np.ndarray:
        if name not in self._cache:
            path = next(p for p in self.paths if p.name == name)
            self._cache[name] = fit_background(load_image(path), self.camera.width, self.camera.height)
        return self._cache[name]


def generate_one(source: _Source, index: int, config: AugmentConfig, backgrounds: _Backgrounds | None):
    """Draw parameters for output ``index`` of ``source`` and render it.

    Poses whose synthesis fails (label leaving the frame, degenerate view)
    are redrawn from the same stream, so the result is still a function of
    the per-image seed alone.
    """
    seed = image_seed(config.seed, source.path.name, index)
    rng = np.random.default_rng(seed)
    last_exc = None
    for _ in range(MAX_POSE_DRAWS):
        pose = Pose(*(float(v) for v in sample_poses(rng, config.pose)[0]))
        bg_name = "none"
        if backgrounds is not None and backgrounds.paths:
            bg_name = backgrounds.paths[int(rng.integers(len(backgrounds.paths)))].name
        jitter = Jitter.draw(rng, config.jitter)
        bg = backgrounds.get(bg_name) if bg_name != "none" else None
        try:
            out, mask = render_record(source.image, source.region, pose, bg, jitter, config)
        except LabelSynthError as exc:
            last_exc = exc
            continue
        name = f"{source.path.stem}_{index:04d}.png"
        return ManifestRecord(name, source.path.name, pose, bg_name, jitter, seed), out, mask
    raise LabelSynthError(f"no renderable pose after {MAX_POSE_DRAWS} draws: {last_exc}")


def replay_record(record: ManifestRecord, input_dir, config: AugmentConfig):
    """Regenerate one manifest record from its stored parameters."""
    source = _Source(Path(input_dir) / record.source, config)
    bg = None
    if record.background != "none":
        if config.backgrounds is None:
            raise ConfigError("record uses a background but no background directory is configured")
        bg = fit_background(load_image(Path(config.backgrounds) / record.background), config.camera.width, config.camera.height)
    return render_record(source.image, source.region, record.pose, bg, record.jitter, config)


# -- batch driver -------------------------------------------------------


def _work(args):
    path, indices, config, out_dir, bg_paths = args
    try:
        source = _Source(path, config)
    except (LabelSynthError, OSError) as exc:
        return path.name, None, f"{type(exc).__name__}: {exc}"
    backgrounds = _Backgrounds(bg_paths, config.camera) if bg_paths else None
    records = []
    for i in indices:
        try:
            rec, img, _ = generate_one(source, i, config, backgrounds)
        except LabelSynthError as exc:
            log.warning("%s #%d skipped: %s", path.name, i, exc)
            continue
        save_png(Path(out_dir) / rec.output, img)
        records.append(rec)
    return path.name, records, None


@dataclass
class AugmentSummary:
    inputs: int = 0
    succeeded: int = 0
    failed: list[tuple[str, str]] = field(default_factory=list)
    records: list[ManifestRecord] = field(default_factory=list)
    manifest: Path | None = None


def run_augment(input_dir, config: AugmentConfig, out_dir, jobs: int = 1) -> AugmentSummary:
    """Generate the dataset for every image in ``input_dir``.

    Inputs whose label cannot be detected are logged and skipped. The
    manifest lists records in input order, then index order, regardless of
    ``jobs``.
    """
    inputs = list_images(input_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bg_paths = list_images(config.backgrounds) if config.backgrounds is not None else []
    if config.backgrounds is not None and not bg_paths:
        raise ConfigError(f"no background images in {config.backgrounds}")
    tasks = [(p, range(config.count), config, out_dir, bg_paths) for p in inputs]
    if jobs > 1 and len(tasks) > 0:
        # split each input's indices so a single input still spreads over workers
        step = max(1, -(-config.count // jobs))
        tasks = [
            (p, range(s, min(s + step, config.count)), config, out_dir, bg_paths)
            for p in inputs
            for s in range(0, config.count, step)
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_work, tasks))
    else:
        results = [_work(t) for t in tasks]

    summary = AugmentSummary(inputs=len(inputs))
    per_input: dict[str, list[ManifestRecord]] = {}
    errors: dict[str, str] = {}
    for name, records, err in results:
        if err is not None:
            errors.setdefault(name, err)
        else:
            per_input.setdefault(name, []).extend(records)
    for p in inputs:
        if p.name in errors:
            log.error("%s: %s", p.name, errors[p.name])
            summary.failed.append((p.name, errors[p.name]))
        else:
            summary.succeeded += 1
            summary.records.extend(per_input.get(p.name, []))
    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MANIFEST_HEADER)
        for rec in summary.records:
            fh.write(rec.format() + "\n")
    summary.manifest = manifest
    return summary


def with_overrides(config: AugmentConfig, **kw) -> AugmentConfig:
    """Copy of ``config`` with the non-None keyword values replaced."""
    vals = {k: v for k, v in kw.items() if v is not None}
    if "backgrounds" in vals:
        vals["backgrounds"] = Path(vals["backgrounds"])
    return replace(config, **vals)
