"""Novel-view synthesis of a cylindrical label from a single image.

The source label is cut into longitudinal line samples: one per pixel of
arc length along the wider visible rim, each running from its wider-rim
anchor A_k towards the vanishing point D until it meets the narrower rim at
C_k. Because the cross-ratio of four collinear points survives any
perspective view, a destination pixel B' on a target line A'C' (with
vanishing point D') reads its colour from the source point B with

    cross_ratio(A, B, C, D) == cross_ratio(A', B', C', D').

Destination pixels are visited directly (backward mapping), so every label
pixel of the target gets exactly one colour and no gap filling is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import IDENTITY_POSE, CameraIntrinsics, CylinderModel, Pose, target_region
from .conic import cross_ratio, solve_fourth_point
from .errors import EmptyTarget, RegionTooNarrow
from .imaging import as_rgb, bilinear_sample, to_uint8
from .region import LabelRegion
from .rims import RimDetectParams, detect_label_region

MIN_SOURCE_ARC_PX = 16.0


@dataclass(frozen=True)
class LineSample:
    """Colours along one source line A_k C_k.

    Positions are signed distances from A_k along the unit ``direction``
    towards C_k: ``a = 0``, ``c = |A_k C_k|`` and ``d`` for the vanishing
    point (``inf`` when it is at infinity).
    """

    anchor: np.ndarray
    end: np.ndarray
    direction: np.ndarray
    c: float
    d: float
    colors: np.ndarray  # (M, channels), evenly spaced from a to c
    a: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return np.linspace(self.a, self.c, len(self.colors))

    def color_at(self, b) -> np.ndarray:
        """Linear interpolation of the stored colours at position(s) ``b``."""
        pos = self.positions
        b = np.asarray(b, dtype=float)
        return np.stack([np.interp(b, pos, self.colors[:, ch]) for ch in range(self.colors.shape[1])], axis=-1)


@dataclass(frozen=True)
class SampledLabel:
    """All line samples of a source label, packed for vectorised lookup.

    ``u`` is the normalised arc-length position of each anchor along the
    wider rim (0 at A_1, 1 at A_N).
    """

    region: LabelRegion
    u: np.ndarray
    anchors: np.ndarray
    ends: np.ndarray
    directions: np.ndarray
    lengths: np.ndarray
    vp_pos: np.ndarray
    colors: np.ndarray  # (N, M_max, channels), NaN-padded
    counts: np.ndarray  # colours per sample
    spacing: float

    def __len__(self) -> int:
        return len(self.u)

    def __getitem__(self, k: int) -> LineSample:
        m = int(self.counts[k])
        return LineSample(
            self.anchors[k], self.ends[k], self.directions[k],
            float(self.lengths[k]), float(self.vp_pos[k]), self.colors[k, :m],
        )

    @property
    def lines(self) -> list[LineSample]:
        return [self[k] for k in range(len(self))]

    def color_at(self, k, b) -> np.ndarray:
        """Colour of sample(s) ``k`` at position(s) ``b`` (vectorised)."""
        k = np.asarray(k, dtype=np.intp)
        b = np.asarray(b, dtype=float)
        m = self.counts[k]
        f = np.clip(b / self.lengths[k], 0.0, 1.0) * (m - 1)
        i0 = np.minimum(np.floor(f).astype(np.intp), m - 2)
        w = (f - i0)[..., None]
        return self.colors[k, i0] * (1 - w) + self.colors[k, i0 + 1] * w


def extract_line_samples(image, region: LabelRegion, spacing: float = 1.0) -> SampledLabel:
    """Cut the label in ``image`` into longitudinal line samples.

    Anchors are spread evenly by arc length (``spacing`` px apart) along the
    wider visible rim from A_1 to A_N; each line is followed from its anchor
    towards the vanishing point until it meets the visible narrower rim.
    Colours are read bilinearly every ``spacing`` px along the line.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    img = as_rgb(np.asarray(image)).astype(float)
    arc = region.wider_arc
    if arc.length < MIN_SOURCE_ARC_PX:
        raise RegionTooNarrow(f"wider rim arc is {arc.length:.1f} px, need {MIN_SOURCE_ARC_PX}")
    anchors, u = arc.sample(spacing)
    ends = region.narrower_anchor(anchors)
    vec = ends - anchors
    lengths = np.linalg.norm(vec, axis=1)
    # a vanishingly short line cannot carry a cross-ratio; borrow a neighbour's direction
    good = lengths > 1e-9
    if not np.any(good):
        raise RegionTooNarrow("rims touch along the whole arc")
    directions = np.where(good[:, None], vec / np.where(good, lengths, 1.0)[:, None], np.nan)
    fallback = region.longitudinal_directions(anchors)
    directions = np.where(good[:, None], directions, fallback)
    lengths = np.maximum(lengths, 1e-9)
    if region.vp.is_infinite:
        vp_pos = np.full(len(anchors), np.inf)
    else:
        vp_pos = np.sum((region.vp.xy() - anchors) * directions, axis=1)
    counts = np.maximum(2, np.ceil(lengths / spacing).astype(np.intp))
    m_max = int(counts.max())
    colors = np.full((len(anchors), m_max, img.shape[2]), np.nan)
    for m in np.unique(counts):
        rows = np.flatnonzero(counts == m)
        t = np.linspace(0.0, 1.0, m)
        pos = t[None, :] * lengths[rows, None]
        pts = anchors[rows, None, :] + pos[..., None] * directions[rows, None, :]
        colors[rows, :m] = bilinear_sample(img, pts[..., 0], pts[..., 1])
    return SampledLabel(region, u, anchors, ends, directions, lengths, vp_pos, colors, counts, spacing)


def reproject(samples: SampledLabel, target: LabelRegion, shape=None, *, trace: bool = False):
    """Paint the sampled label into ``target``.

    Every pixel centre inside the target region is assigned to the target
    longitudinal line through it; its transverse position ``u`` along the
    target rim matching the source's anchor rim selects (and linearly blends) the two nearest source
    samples, and the cross-ratio of (A', B', C', D') fixes the source
    position on each.

    Returns ``(image uint8, mask)``; with ``trace`` also a dict of per-pixel
    quantities (destination cross-ratio, chosen samples and source positions).
    """
    if shape is None:
        intr = getattr(target, "intrinsics", None)
        if intr is None:
            raise ValueError("shape is required when the target carries no intrinsics")
        shape = intr.shape
    h, w = int(shape[0]), int(shape[1])
    channels = samples.colors.shape[2]
    if target.arc(samples.region.wider).length < 2.0:
        raise EmptyTarget("target rim arc is shorter than 2 px")

    x0, y0, x1, y1 = target.bbox()
    xa, xb = max(0, int(np.floor(x0))), min(w - 1, int(np.ceil(x1)))
    ya, yb = max(0, int(np.floor(y0))), min(h - 1, int(np.ceil(y1)))
    out = np.zeros((h, w, channels))
    mask = np.zeros((h, w), dtype=bool)
    if xb < xa or yb < ya:
        raise EmptyTarget("target region lies outside the frame")
    ys, xs = np.mgrid[ya : yb + 1, xa : xb + 1]
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
    # anchor on the same physical rim as the source, whichever looks wider here
    pc = target.pencil_coordinates(pts, anchor_rim=samples.region.wider)
    inside = pc["inside"]
    if not np.any(inside):
        raise EmptyTarget("target region covers no pixel centre")
    pts = pts[inside]
    s_a, s_c, s_d, u = (pc[k][inside] for k in ("s_a", "s_c", "s_d", "u"))

    # destination positions measured from A' towards C'
    sgn = np.where(s_c >= s_a, 1.0, -1.0)
    b_dst = sgn * (0.0 - s_a)
    c_dst = np.abs(s_c - s_a)
    d_dst = np.where(np.isfinite(s_d), sgn * (s_d - s_a), np.inf)
    degenerate = c_dst <= 1e-9
    c_safe = np.where(degenerate, 1.0, c_dst)
    b_safe = np.where(degenerate, 0.0, np.clip(b_dst, 0.0, c_safe))
    kappa = cross_ratio(0.0, b_safe, c_safe, d_dst)

    n = len(samples)
    kf = u * (n - 1)
    k0 = np.clip(np.floor(kf).astype(np.intp), 0, n - 2)
    wk = np.clip(kf - k0, 0.0, 1.0)
    color = np.zeros((len(pts), channels))
    b_src = []
    for k, weight in ((k0, 1.0 - wk), (k0 + 1, wk)):
        L = samples.lengths[k]
        b = solve_fourth_point(0.0, L, samples.vp_pos[k], kappa)
        b = np.clip(b, 0.0, L)
        b_src.append(b)
        color += weight[:, None] * samples.color_at(k, b)

    iy = pts[:, 1].astype(np.intp)
    ix = pts[:, 0].astype(np.intp)
    out[iy, ix] = color
    mask[iy, ix] = True
    img = to_uint8(out)
    if not trace:
        return img, mask
    info = {
        "pixels": pts,
        "kappa": kappa,
        "k0": k0,
        "weight": wk,
        "b_src": np.column_stack(b_src),
        "b_dst": b_safe,
        "c_dst": c_safe,
        "d_dst": d_dst,
        "u": u,
        "anchor_dst": pts + s_a[:, None] * pc["e"][inside],
        "end_dst": pts + s_c[:, None] * pc["e"][inside],
    }
    return img, mask, info


def synthesize_view(
    image,
    region: LabelRegion,
    pose: Pose,
    cylinder: CylinderModel | None = None,
    intrinsics: CameraIntrinsics | None = None,
    spacing: float = 1.0,
):
    """Render the label of ``image`` as it would look at ``pose``.

    Returns ``(image uint8, mask)`` at the intrinsics' frame size.
    """
    cylinder = cylinder or CylinderModel()
    intrinsics = intrinsics or CameraIntrinsics()
    samples = extract_line_samples(image, region, spacing)
    target = target_region(pose, cylinder, intrinsics)
    return reproject(samples, target, intrinsics.shape)


def front_view(
    image,
    params: RimDetectParams | None = None,
    cylinder: CylinderModel | None = None,
    intrinsics: CameraIntrinsics | None = None,
):
    """Detect the label and re-render it facing the camera at the identity pose."""
    region = detect_label_region(image, params)
    return synthesize_view(image, region, IDENTITY_POSE, cylinder, intrinsics)
